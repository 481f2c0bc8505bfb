//! Blended guided decoding.
//!
//! At each step the base model's next-token distribution is multiplied by
//! the guide's contrastive posteriors `P(c | x_t, x_<t)` raised to each
//! active code's strength, then renormalized:
//!
//! ```text
//! P(x_t | x_<t, C) ∝ P_LM(x_t | x_<t) · Π_{c ∈ C} P(c | x_t, x_<t)^{ω_c}
//! ```
//!
//! The posterior for a candidate token comes from Bayes' rule over the
//! guide's per-code sequence likelihoods, accumulated in log-space across
//! the generated tokens:
//!
//! ```text
//! P(c | x_1..t) = P(c) · Π_j P(x_j | x_<j, c) / Σ_{c'} P(c') · Π_j P(x_j | x_<j, c')
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::perplexity_given;
use crate::par;
use crate::prob::{argmax_tiebreak, log_softmax, log_sum_exp, softmax, softmax_slice};
use crate::provider::Providers;
use crate::types::{ControlCode, ControlConfig, LogitVector, ProbVector, TokenId};

/// How the posterior of a code is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastMode {
    /// Bayes over every code the guide advertises.
    #[default]
    Multiclass,
    /// Each code against its complement, the prior-weighted mixture of all other codes.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub repetition_penalty: f64,
    pub temperature: f64,
    pub stop_at_sentence: bool,
    /// Overrides the base model's own end-of-text token.
    pub eos_token: Option<TokenId>,
    pub hard_cap: usize,
    /// Floor applied to posteriors before raising them to a strength.
    pub epsilon_prob: f64,
    pub contrast: ContrastMode,
    /// Divide accumulated guide log-likelihoods by the sequence length.
    pub length_normalize: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 40,
            repetition_penalty: 1.2,
            temperature: 1.0,
            stop_at_sentence: true,
            eos_token: None,
            hard_cap: 128,
            epsilon_prob: 1e-10,
            contrast: ContrastMode::Multiclass,
            length_normalize: false,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 || self.max_tokens > self.hard_cap {
            return Err(Error::InvalidParams(format!(
                "max_tokens must be in 1..={}, got {}",
                self.hard_cap, self.max_tokens
            )));
        }
        if !self.repetition_penalty.is_finite() || self.repetition_penalty < 1.0 {
            return Err(Error::InvalidPenalty(self.repetition_penalty));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.epsilon_prob > 0.0 && self.epsilon_prob < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon_prob must be in (0, 1), got {}",
                self.epsilon_prob
            )));
        }
        Ok(())
    }
}

/// Per-code posteriors for every candidate next token.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    codes: Vec<ControlCode>,
    rows: Vec<Vec<f64>>,
}

impl PosteriorMatrix {
    pub fn new(codes: Vec<ControlCode>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if codes.len() != rows.len() {
            return Err(Error::ShapeMismatch {
                expected: codes.len(),
                actual: rows.len(),
            });
        }
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(Error::ShapeMismatch {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { codes, rows })
    }

    pub fn empty() -> Self {
        Self {
            codes: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn codes(&self) -> &[ControlCode] {
        &self.codes
    }

    pub fn row(&self, code: &ControlCode) -> Option<&[f64]> {
        self.codes
            .iter()
            .position(|c| c == code)
            .map(|i| self.rows[i].as_slice())
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.rows.first().map(Vec::len)
    }
}

/// Posterior of each code for every candidate token, in log-space.
///
/// `cumulative[i]` is the running `Σ_j log P(x_j | x_<j, c_i)` over the
/// tokens generated so far and `step_logprobs[i][x]` is `log P(x | ·, c_i)`
/// for the candidate. With `length = Some(t)` the summed log-likelihood is
/// divided by `t`.
pub fn contrastive_posterior(
    codes: &[ControlCode],
    log_priors: &[f64],
    cumulative: &[f64],
    step_logprobs: &[Vec<f64>],
    length: Option<usize>,
) -> Result<PosteriorMatrix> {
    let k = codes.len();
    if k < 2 {
        return Err(Error::ContrastSetTooSmall(k));
    }
    for n in [log_priors.len(), cumulative.len(), step_logprobs.len()] {
        if n != k {
            return Err(Error::ShapeMismatch {
                expected: k,
                actual: n,
            });
        }
    }
    let v = step_logprobs[0].len();
    if let Some(bad) = step_logprobs.iter().find(|r| r.len() != v) {
        return Err(Error::ShapeMismatch {
            expected: v,
            actual: bad.len(),
        });
    }
    let scale = match length {
        Some(t) if t > 0 => 1.0 / t as f64,
        _ => 1.0,
    };
    let mut rows = vec![vec![0.0; v]; k];
    let mut scores = vec![0.0; k];
    for x in 0..v {
        for i in 0..k {
            scores[i] = log_priors[i] + (cumulative[i] + step_logprobs[i][x]) * scale;
        }
        let lse = log_sum_exp(&scores);
        for i in 0..k {
            rows[i][x] = (scores[i] - lse).exp();
        }
    }
    PosteriorMatrix::new(codes.to_vec(), rows)
}

fn check_blend_shapes(base_len: usize, posteriors: &PosteriorMatrix) -> Result<()> {
    match posteriors.vocab_size() {
        Some(v) if v != base_len => Err(Error::ShapeMismatch {
            expected: base_len,
            actual: v,
        }),
        _ => Ok(()),
    }
}

/// One blending step: `normalize(P_LM · Π_c P(c|·)^{ω_c})`.
///
/// Strengths are taken from `config` as-is (already summing to the total
/// strength). An uncontrolled config returns `softmax(base_logits)` exactly.
pub fn blend_step(
    base_logits: &LogitVector,
    posteriors: &PosteriorMatrix,
    config: &ControlConfig,
    epsilon_prob: f64,
) -> Result<ProbVector> {
    if config.is_uncontrolled() {
        return softmax(base_logits, 1.0);
    }
    check_blend_shapes(base_logits.len(), posteriors)?;
    let rows = config
        .entries()
        .iter()
        .map(|e| {
            posteriors
                .row(&e.code)
                .map(|r| (e.strength, r))
                .ok_or_else(|| Error::UnknownControlCode(e.code.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = log_softmax(base_logits.as_slice(), 1.0)?;
    for (x, score) in scores.iter_mut().enumerate() {
        for &(strength, row) in &rows {
            *score += strength * row[x].max(epsilon_prob).ln();
        }
    }
    Ok(ProbVector::from_normalized(softmax_slice(&scores, 1.0)?))
}

/// The single-code special case `P_LM · P(c|·)^ω`, written out directly.
pub fn blend_single(
    base_logits: &LogitVector,
    posterior: &[f64],
    strength: f64,
    epsilon_prob: f64,
) -> Result<ProbVector> {
    if strength == 0.0 {
        return softmax(base_logits, 1.0);
    }
    if posterior.len() != base_logits.len() {
        return Err(Error::ShapeMismatch {
            expected: base_logits.len(),
            actual: posterior.len(),
        });
    }
    let log_base = log_softmax(base_logits.as_slice(), 1.0)?;
    let scores: Vec<f64> = log_base
        .iter()
        .zip(posterior)
        .map(|(lb, p)| lb + strength * p.max(epsilon_prob).ln())
        .collect();
    Ok(ProbVector::from_normalized(softmax_slice(&scores, 1.0)?))
}

/// Penalizes tokens that were already generated: positive logits are
/// divided by `penalty`, non-positive ones multiplied by it.
pub fn apply_repetition_penalty(
    logits: &LogitVector,
    generated: &[TokenId],
    penalty: f64,
) -> Result<LogitVector> {
    if !penalty.is_finite() || penalty < 1.0 {
        return Err(Error::InvalidPenalty(penalty));
    }
    let mut values = logits.as_slice().to_vec();
    if penalty == 1.0 || generated.is_empty() {
        return LogitVector::new(values);
    }
    let mut seen = vec![false; values.len()];
    for &t in generated {
        let i = t.index();
        if i >= values.len() {
            return Err(Error::VocabMismatch(format!(
                "generated token {t} >= vocabulary size {}",
                values.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        let v = values[i];
        values[i] = if v > 0.0 { v / penalty } else { v * penalty };
    }
    LogitVector::new(values)
}

/// Distribution for the next token plus the guide log-probabilities needed
/// to advance the session once a token is picked.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    pub probs: ProbVector,
    guide_logprobs: Vec<Vec<f64>>,
    complement_logprobs: Vec<Vec<f64>>,
}

/// Incremental decoding state for one line.
pub struct DecodingSession<'a> {
    providers: &'a Providers,
    config: ControlConfig,
    params: GenerationParams,
    contrast: Vec<ControlCode>,
    priors: Vec<f64>,
    cumulative: Vec<f64>,
    complement_cumulative: Vec<f64>,
    context: Vec<TokenId>,
    generated: Vec<TokenId>,
}

impl<'a> DecodingSession<'a> {
    pub fn new(
        providers: &'a Providers,
        config: ControlConfig,
        prompt: &[TokenId],
        params: GenerationParams,
    ) -> Result<Self> {
        params.validate()?;
        let contrast = providers.guide().codes().to_vec();
        for e in config.entries() {
            if !contrast.contains(&e.code) {
                return Err(Error::UnknownControlCode(e.code.to_string()));
            }
        }
        if !config.is_uncontrolled() && contrast.len() < 2 {
            return Err(Error::ContrastSetTooSmall(contrast.len()));
        }
        let priors = contrast
            .iter()
            .map(|c| providers.guide().prior(c))
            .collect::<Result<Vec<_>>>()?;
        crate::provider::check_context(prompt, providers.base().vocab_size())?;
        let k = contrast.len();
        Ok(Self {
            providers,
            config,
            params,
            contrast,
            priors,
            cumulative: vec![0.0; k],
            complement_cumulative: vec![0.0; k],
            context: prompt.to_vec(),
            generated: Vec::new(),
        })
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn contrast_codes(&self) -> &[ControlCode] {
        &self.contrast
    }

    /// Running `Σ_j log P(x_j | x_<j, c)` per contrast code.
    pub fn cumulative_loglik(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.generated
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    fn guide_step(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let logits = self
            .providers
            .guide()
            .cc_next_logits_batch(&self.context, &self.contrast)?;
        let v = self.providers.base().vocab_size();
        let logprobs = logits
            .iter()
            .map(|l| {
                if l.len() != v {
                    return Err(Error::ShapeMismatch {
                        expected: v,
                        actual: l.len(),
                    });
                }
                log_softmax(l.as_slice(), 1.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let complements = match self.params.contrast {
            ContrastMode::Multiclass => Vec::new(),
            ContrastMode::Binary => self.complement_logprobs(&logprobs),
        };
        Ok((logprobs, complements))
    }

    // log P(x | c̄) as the prior-weighted mixture of every other code.
    fn complement_logprobs(&self, logprobs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.contrast.len();
        let v = logprobs.first().map_or(0, Vec::len);
        (0..k)
            .map(|i| {
                let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
                let mass: f64 = others.iter().map(|&j| self.priors[j]).sum();
                let mut terms = vec![0.0; others.len()];
                (0..v)
                    .map(|x| {
                        for (slot, &j) in others.iter().enumerate() {
                            terms[slot] = (self.priors[j] / mass).ln() + logprobs[j][x];
                        }
                        log_sum_exp(&terms)
                    })
                    .collect()
            })
            .collect()
    }

    fn length(&self) -> Option<usize> {
        self.params
            .length_normalize
            .then_some(self.generated.len() + 1)
    }

    fn posterior_from(
        &self,
        logprobs: &[Vec<f64>],
        complements: &[Vec<f64>],
    ) -> Result<PosteriorMatrix> {
        match self.params.contrast {
            ContrastMode::Multiclass => {
                let log_priors: Vec<f64> = self.priors.iter().map(|p| p.ln()).collect();
                contrastive_posterior(
                    &self.contrast,
                    &log_priors,
                    &self.cumulative,
                    logprobs,
                    self.length(),
                )
            }
            ContrastMode::Binary => {
                let mut rows = Vec::with_capacity(self.contrast.len());
                for (i, code) in self.contrast.iter().enumerate() {
                    let pair = [code.clone(), code.clone()];
                    let prior = self.priors[i];
                    let m = contrastive_posterior(
                        &pair,
                        &[prior.ln(), (1.0 - prior).ln()],
                        &[self.cumulative[i], self.complement_cumulative[i]],
                        &[logprobs[i].clone(), complements[i].clone()],
                        self.length(),
                    )?;
                    rows.push(m.rows.into_iter().next().unwrap_or_default());
                }
                PosteriorMatrix::new(self.contrast.clone(), rows)
            }
        }
    }

    /// Contrastive posterior matrix at the current context.
    pub fn posterior(&self) -> Result<PosteriorMatrix> {
        if self.contrast.len() < 2 {
            return Err(Error::ContrastSetTooSmall(self.contrast.len()));
        }
        let (lp, comp) = self.guide_step()?;
        self.posterior_from(&lp, &comp)
    }

    /// Base logits after temperature scaling and repetition penalty.
    pub fn base_logits(&self) -> Result<LogitVector> {
        let raw = self.providers.base().next_logits(&self.context)?;
        let penalized =
            apply_repetition_penalty(&raw, &self.generated, self.params.repetition_penalty)?;
        if self.params.temperature == 1.0 {
            Ok(penalized)
        } else {
            let t = self.params.temperature;
            LogitVector::new(penalized.as_slice().iter().map(|x| x / t).collect())
        }
    }

    /// Blended distribution over the next token.
    pub fn next_distribution(&self) -> Result<StepDistribution> {
        let base = self.base_logits()?;
        if self.config.is_uncontrolled() {
            return Ok(StepDistribution {
                probs: blend_step(&base, &PosteriorMatrix::empty(), &self.config, 1.0)?,
                guide_logprobs: Vec::new(),
                complement_logprobs: Vec::new(),
            });
        }
        let (logprobs, complements) = self.guide_step()?;
        let posteriors = self.posterior_from(&logprobs, &complements)?;
        let probs = blend_step(&base, &posteriors, &self.config, self.params.epsilon_prob)?;
        Ok(StepDistribution {
            probs,
            guide_logprobs: logprobs,
            complement_logprobs: complements,
        })
    }

    /// Appends `token` and folds its guide log-likelihoods into the running sums.
    pub fn advance(&mut self, token: TokenId, step: &StepDistribution) -> Result<()> {
        let i = token.index();
        if i >= step.probs.len() {
            return Err(Error::VocabMismatch(format!(
                "token {token} >= vocabulary size {}",
                step.probs.len()
            )));
        }
        for (acc, lp) in self.cumulative.iter_mut().zip(&step.guide_logprobs) {
            *acc += lp[i];
        }
        for (acc, lp) in self
            .complement_cumulative
            .iter_mut()
            .zip(&step.complement_logprobs)
        {
            *acc += lp[i];
        }
        self.context.push(token);
        self.generated.push(token);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Sentence,
    Eos,
    MaxTokens,
    /// Nothing was produced, e.g. the first token was end-of-text.
    EmptyGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedLine {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Blended probability of each chosen token.
    pub step_probs: Vec<f64>,
    pub stop: StopReason,
}

impl DecodedLine {
    pub fn is_empty(&self) -> bool {
        self.stop == StopReason::EmptyGeneration
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Byte offset just past the first sentence terminator that is followed by
/// whitespace, end of text, or another terminator.
pub fn first_sentence_end(text: &str) -> Option<usize> {
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if is_terminator(c) {
            match chars.peek() {
                None => return Some(i + c.len_utf8()),
                Some(&(_, n)) if n.is_whitespace() || is_terminator(n) => {
                    return Some(i + c.len_utf8())
                }
                _ => {}
            }
        }
    }
    None
}

/// The first sentence of `text`, trimmed; the whole trimmed text if there is no terminator.
pub fn extract_first_sentence(text: &str) -> String {
    let trimmed = text.trim_start();
    match first_sentence_end(trimmed) {
        Some(end) => trimmed[..end].trim().to_string(),
        None => trimmed.trim().to_string(),
    }
}

/// Greedy blended decoding of one line after `prompt`.
pub fn decode_line(
    providers: &Providers,
    config: &ControlConfig,
    prompt: &[TokenId],
    params: &GenerationParams,
) -> Result<DecodedLine> {
    let mut session = DecodingSession::new(providers, config.clone(), prompt, params.clone())?;
    let eos = params.eos_token.or_else(|| providers.base().eos_token());
    let mut step_probs = Vec::new();
    let mut stop = StopReason::MaxTokens;
    for _ in 0..params.max_tokens {
        let step = session.next_distribution()?;
        let token = argmax_tiebreak(step.probs.as_slice());
        if Some(token) == eos {
            stop = StopReason::Eos;
            break;
        }
        step_probs.push(step.probs.as_slice()[token.index()]);
        session.advance(token, &step)?;
        if params.stop_at_sentence {
            let text = providers.base().detokenize(session.generated())?;
            if first_sentence_end(text.trim_start()).is_some() {
                stop = StopReason::Sentence;
                break;
            }
        }
    }
    let tokens = session.generated().to_vec();
    let text = if tokens.is_empty() {
        String::new()
    } else {
        extract_first_sentence(&providers.base().detokenize(&tokens)?)
    };
    if text.is_empty() {
        stop = StopReason::EmptyGeneration;
    }
    Ok(DecodedLine {
        text,
        tokens,
        step_probs,
        stop,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthCandidate {
    pub multiplier: f64,
    pub text: String,
    /// Base-model perplexity of the candidate given the prompt; `None` when empty.
    pub perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfReport {
    pub chosen_multiplier: f64,
    pub candidates: Vec<StrengthCandidate>,
}

/// Decodes one candidate per strength multiplier and keeps the one with the
/// lowest base-model perplexity. Ties go to the smaller multiplier.
pub fn best_of_strengths(
    providers: &Providers,
    config: &ControlConfig,
    prompt: &[TokenId],
    params: &GenerationParams,
    multipliers: &[f64],
) -> Result<(DecodedLine, BestOfReport)> {
    if multipliers.is_empty() {
        return Err(Error::InvalidParams("no strength multipliers given".into()));
    }
    if let Some(m) = multipliers.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(Error::InvalidParams(format!(
            "strength multiplier must be >= 0, got {m}"
        )));
    }
    let decoded = par::map(multipliers, |&m| -> Result<(DecodedLine, Option<f64>)> {
        let line = decode_line(providers, &config.scaled(m), prompt, params)?;
        let ppl = if line.tokens.is_empty() {
            None
        } else {
            Some(perplexity_given(providers.base(), prompt, &line.tokens)?)
        };
        Ok((line, ppl))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rank = |i: usize| (decoded[i].1.unwrap_or(f64::INFINITY), multipliers[i]);
    let best = (0..decoded.len())
        .min_by(|&a, &b| {
            let (pa, ma) = rank(a);
            let (pb, mb) = rank(b);
            pa.total_cmp(&pb).then(ma.total_cmp(&mb))
        })
        .unwrap_or(0);
    let report = BestOfReport {
        chosen_multiplier: multipliers[best],
        candidates: decoded
            .iter()
            .zip(multipliers)
            .map(|((line, ppl), &m)| StrengthCandidate {
                multiplier: m,
                text: line.text.clone(),
                perplexity: *ppl,
            })
            .collect(),
    };
    let chosen = decoded
        .into_iter()
        .nth(best)
        .map(|(l, _)| l)
        .unwrap_or_else(|| unreachable!("best index is within the candidate list"));
    Ok((chosen, report))
}
