use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kendall_tau_a, perplexity_given, Classifier};
use crate::decoder::{decode_line, GenerationParams};
use crate::error::{Error, Result};
use crate::par;
use crate::provider::Providers;
use crate::types::{ControlCode, ControlConfig};

/// Share of the total strength given to the first code at each sweep step.
pub const SWEEP_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub fraction: f64,
    pub text: String,
    /// Classifier score for the first code.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub prompt: String,
    pub c1: ControlCode,
    pub c2: ControlCode,
    pub total_strength: f64,
    pub steps: Vec<SweepStep>,
    pub tau_a: f64,
}

fn check_pair(providers: &Providers, c1: &ControlCode, c2: &ControlCode) -> Result<()> {
    if c1 == c2 {
        return Err(Error::InvalidParams(format!(
            "sweep needs two different codes, got `{c1}` twice"
        )));
    }
    for c in [c1, c2] {
        if !providers.guide().codes().contains(c) {
            return Err(Error::UnknownControlCode(c.to_string()));
        }
    }
    Ok(())
}

fn check_strength(s: f64) -> Result<()> {
    if s.is_finite() && s >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "strength must be >= 0, got {s}"
        )))
    }
}

/// Re-decodes one line after `prompt` while shifting the strength from `c2`
/// to `c1`, and ranks the classifier's `c1` scores with τ-a.
pub fn fidelity_sweep(
    prompt: &str,
    c1: &ControlCode,
    c2: &ControlCode,
    total_strength: f64,
    providers: &Providers,
    classifier: &dyn Classifier,
    params: &GenerationParams,
) -> Result<SweepResult> {
    check_pair(providers, c1, c2)?;
    check_strength(total_strength)?;
    let tokens = providers.base().tokenize(prompt)?;
    let labels = [c1.to_string(), c2.to_string()];
    let steps = par::map(&SWEEP_FRACTIONS, |&phi| -> Result<SweepStep> {
        let config = ControlConfig::new(
            vec![(c1.clone(), phi), (c2.clone(), 1.0 - phi)],
            total_strength,
        )?;
        let line = decode_line(providers, &config, &tokens, params)?;
        let score = classifier.classify(&line.text, &labels)?[0];
        Ok(SweepStep {
            fraction: phi,
            text: line.text,
            score,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = steps.iter().map(|s| s.score).collect();
    Ok(SweepResult {
        prompt: prompt.to_string(),
        c1: c1.clone(),
        c2: c2.clone(),
        total_strength,
        tau_a: kendall_tau_a(&scores)?,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub c1: ControlCode,
    pub c2: ControlCode,
    pub multiplier: f64,
    /// NaN when every sweep in the cell failed.
    pub mean_tau_a: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapItem {
    pub multiplier: f64,
    pub prompt: String,
    pub c1: ControlCode,
    pub c2: ControlCode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapReport {
    pub cells: Vec<HeatmapCell>,
    pub items: Vec<HeatmapItem>,
    pub failures: usize,
}

/// Mean τ-a per (pair, multiplier) over every prompt.
///
/// The total strength of a cell is `multiplier · base_strength`. Failed
/// sweeps are left out of the cell mean and counted in `failures`.
pub fn heatmap(
    prompts: &[String],
    pairs: &[(ControlCode, ControlCode)],
    multipliers: &[f64],
    base_strength: f64,
    providers: &Providers,
    classifier: &dyn Classifier,
    params: &GenerationParams,
) -> Result<HeatmapReport> {
    if prompts.is_empty() || pairs.is_empty() || multipliers.is_empty() {
        return Err(Error::InsufficientData(
            "heatmap needs prompts, code pairs and multipliers".into(),
        ));
    }
    for (c1, c2) in pairs {
        check_pair(providers, c1, c2)?;
    }
    check_strength(base_strength)?;
    for &m in multipliers {
        check_strength(m)?;
    }

    let mut jobs = Vec::with_capacity(pairs.len() * multipliers.len() * prompts.len());
    for (p, _) in pairs.iter().enumerate() {
        for (m, _) in multipliers.iter().enumerate() {
            for (q, _) in prompts.iter().enumerate() {
                jobs.push((p, m, q));
            }
        }
    }
    let items = par::map(&jobs, |&(p, m, q)| {
        let (c1, c2) = &pairs[p];
        let multiplier = multipliers[m];
        let outcome = fidelity_sweep(
            &prompts[q],
            c1,
            c2,
            multiplier * base_strength,
            providers,
            classifier,
            params,
        );
        if let Err(e) = &outcome {
            log::warn!(
                "sweep {c1}/{c2} x{multiplier} on {:?} failed: {e}",
                prompts[q]
            );
        }
        HeatmapItem {
            multiplier,
            prompt: prompts[q].clone(),
            c1: c1.clone(),
            c2: c2.clone(),
            error: outcome.as_ref().err().map(ToString::to_string),
            sweep: outcome.ok(),
        }
    });

    let per_cell = prompts.len();
    let cells = items
        .chunks(per_cell)
        .map(|chunk| {
            let taus: Vec<f64> = chunk
                .iter()
                .filter_map(|i| i.sweep.as_ref().map(|s| s.tau_a))
                .collect();
            let n = taus.len();
            HeatmapCell {
                c1: chunk[0].c1.clone(),
                c2: chunk[0].c2.clone(),
                multiplier: chunk[0].multiplier,
                mean_tau_a: if n == 0 {
                    f64::NAN
                } else {
                    taus.iter().sum::<f64>() / n as f64
                },
                n,
            }
        })
        .collect();
    let failures = items.iter().filter(|i| i.sweep.is_none()).count();
    if failures > 0 {
        log::warn!("{failures} of {} sweeps failed", items.len());
    }
    Ok(HeatmapReport {
        cells,
        items,
        failures,
    })
}

/// `pair_c1,pair_c2,multiplier,mean_tau_a,n` rows.
pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("pair_c1,pair_c2,multiplier,mean_tau_a,n\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.c1, c.c2, c.multiplier, c.mean_tau_a, c.n
        );
    }
    out
}

fn tau_color(t: f64) -> String {
    if !t.is_finite() {
        return "#cccccc".into();
    }
    // white at 0, blue toward +1, red toward -1
    let a = t.clamp(-1.0, 1.0).abs();
    let fade = (255.0 * (1.0 - a)).round() as u8;
    if t >= 0.0 {
        format!("#{fade:02x}{fade:02x}ff")
    } else {
        format!("#ff{fade:02x}{fade:02x}")
    }
}

/// Grid rendering: one row per code pair, one column per multiplier.
pub fn heatmap_svg(cells: &[HeatmapCell]) -> String {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for c in cells {
        let key = (c.c1.to_string(), c.c2.to_string());
        if !rows.contains(&key) {
            rows.push(key);
        }
        if !cols.contains(&c.multiplier) {
            cols.push(c.multiplier);
        }
    }
    let (cell, left, top) = (60.0, 160.0, 30.0);
    let width = left + cell * cols.len() as f64 + 10.0;
    let height = top + cell * rows.len() as f64 + 10.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    for (j, m) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"20\" text-anchor=\"middle\">{m}x</text>"
        );
    }
    for (i, (a, b)) in rows.iter().enumerate() {
        let y = top + cell * (i as f64 + 0.5);
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\" dominant-baseline=\"middle\">{a} / {b}</text>",
            left - 8.0
        );
    }
    for c in cells {
        let i = rows
            .iter()
            .position(|(a, b)| a == c.c1.as_str() && b == c.c2.as_str())
            .unwrap_or(0);
        let j = cols.iter().position(|m| *m == c.multiplier).unwrap_or(0);
        let (x, y) = (left + cell * j as f64, top + cell * i as f64);
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#ffffff\"/>",
            tau_color(c.mean_tau_a)
        );
        let label = if c.mean_tau_a.is_finite() {
            format!("{:.2}", c.mean_tau_a)
        } else {
            "n/a".into()
        };
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" dominant-baseline=\"middle\">{label}</text>",
            x + cell / 2.0,
            y + cell / 2.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean τ-a of stories whose sentence order was shuffled, scored for `c1`
/// against `c2`. Story `i` is shuffled by stream `i` of a ChaCha8 generator
/// seeded with `seed`, so the result does not depend on thread scheduling.
pub fn shuffled_baseline(
    stories: &[Vec<String>],
    c1: &str,
    c2: &str,
    classifier: &dyn Classifier,
    seed: u64,
) -> Result<f64> {
    if stories.is_empty() {
        return Err(Error::InsufficientData("no stories".into()));
    }
    if let Some(i) = stories.iter().position(|s| s.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "story {i} has fewer than 2 sentences"
        )));
    }
    let labels = [c1.to_string(), c2.to_string()];
    let taus = par::map_range(stories.len(), |i| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut order: Vec<&String> = stories[i].iter().collect();
        order.shuffle(&mut rng);
        let scores = order
            .iter()
            .map(|s| classifier.classify(s, &labels).map(|v| v[0]))
            .collect::<Result<Vec<_>>>()?;
        kendall_tau_a(&scores)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(taus.iter().sum::<f64>() / taus.len() as f64)
}

/// Every unordered pair of `codes` at equal weight, with unit total strength.
pub fn equal_pair_configs(codes: &[ControlCode]) -> Vec<ControlConfig> {
    let mut out = Vec::new();
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            if let Ok(cfg) = ControlConfig::new(vec![(a.clone(), 1.0), (b.clone(), 1.0)], 1.0) {
                out.push(cfg);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplRow {
    pub multiplier: f64,
    /// NaN when no continuation was produced.
    pub mean_ppl: f64,
    pub n: usize,
    /// Continuations that came out empty and were left out of the mean.
    pub empty: usize,
}

/// Mean base-model perplexity of continuations of each prompt under each
/// config scaled by each multiplier.
pub fn ppl_grid(
    prompts: &[String],
    configs: &[ControlConfig],
    multipliers: &[f64],
    providers: &Providers,
    params: &GenerationParams,
) -> Result<Vec<PplRow>> {
    if prompts.is_empty() {
        return Err(Error::InsufficientData("no prompts".into()));
    }
    if configs.is_empty() || multipliers.is_empty() {
        return Err(Error::InsufficientData("no configs or multipliers".into()));
    }
    for &m in multipliers {
        check_strength(m)?;
    }
    let tokenized = prompts
        .iter()
        .map(|p| providers.base().tokenize(p))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for m in 0..multipliers.len() {
        for q in 0..prompts.len() {
            for c in 0..configs.len() {
                jobs.push((m, q, c));
            }
        }
    }
    let values = par::map(&jobs, |&(m, q, c)| -> Result<Option<f64>> {
        let cfg = configs[c].scaled(multipliers[m]);
        let line = decode_line(providers, &cfg, &tokenized[q], params)?;
        if line.tokens.is_empty() {
            return Ok(None);
        }
        perplexity_given(providers.base(), &tokenized[q], &line.tokens).map(Some)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let per_row = prompts.len() * configs.len();
    Ok(values
        .chunks(per_row)
        .zip(multipliers)
        .map(|(chunk, &multiplier)| {
            let ok: Vec<f64> = chunk.iter().flatten().copied().collect();
            PplRow {
                multiplier,
                mean_ppl: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                },
                n: ok.len(),
                empty: chunk.len() - ok.len(),
            }
        })
        .collect())
}
