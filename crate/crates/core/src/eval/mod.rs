//! Fluency and control-fidelity measurements.

mod classifier;
mod sweep;

pub use classifier::{
    Classifier, ClassifyRequest, ClassifyResponse, KeywordClassifier, RemoteClassifier,
};
pub use sweep::{
    equal_pair_configs, fidelity_sweep, heatmap, heatmap_csv, heatmap_svg, ppl_grid,
    shuffled_baseline, HeatmapCell, HeatmapItem, HeatmapReport, PplRow, SweepResult, SweepStep,
    SWEEP_FRACTIONS,
};

use crate::error::{Error, Result};
use crate::provider::{conditional_logprob, BaseLm};
use crate::types::TokenId;

/// `exp(−(1/T) · Σ_t log P(x_t | x_<t))` over `tokens` from an empty context.
pub fn perplexity(base: &dyn BaseLm, tokens: &[TokenId]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InsufficientData(
            "perplexity of an empty sequence".into(),
        ));
    }
    let lp = base.sequence_logprob(tokens)?;
    Ok((-lp / tokens.len() as f64).exp())
}

/// Perplexity of `tokens` as a continuation of `context`.
pub fn perplexity_given(base: &dyn BaseLm, context: &[TokenId], tokens: &[TokenId]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InsufficientData(
            "perplexity of an empty sequence".into(),
        ));
    }
    let lp = conditional_logprob(base, context, tokens)?;
    Ok((-lp / tokens.len() as f64).exp())
}

/// Kendall's τ-a of `scores` against their index order. Tied pairs count
/// as neither concordant nor discordant.
pub fn kendall_tau_a(scores: &[f64]) -> Result<f64> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "tau-a needs at least 2 scores, got {n}"
        )));
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if scores[j] > scores[i] {
                concordant += 1;
            } else if scores[j] < scores[i] {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((concordant - discordant) as f64 / pairs)
}

/// Splits a plain-text corpus into stories: blank lines separate stories,
/// each non-empty line is one sentence.
pub fn parse_story_corpus(text: &str) -> Vec<Vec<String>> {
    let mut stories = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                stories.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        stories.push(current);
    }
    stories
}
