//! Compiles control sketches into per-line control configurations.
//!
//! Each sketch asks for a code over a range of lines `s..=e`. It contributes
//! a Gaussian bump centred on the range midpoint `m = (s + e) / 2`. Sketches
//! are applied in order; after each one the affected code's weights are
//! renormalized to sum to 1 across lines. Finally every line's code weights
//! are rescaled to sum to the total strength.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::log_sum_exp;
use crate::types::{ControlCode, ControlConfig};

/// Lines where every code's weight is below this are left uncontrolled.
pub const UNCONTROLLED_BELOW: f64 = 1e-12;

/// How the Gaussian variance depends on the sketch span `e - s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `σ / (e − s + ε)²`
    #[default]
    Literal,
    /// `σ · ((e − s + ε) / 2)²`
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSketch {
    pub code: ControlCode,
    pub start: usize,
    pub end: usize,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_strength() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchSet {
    pub n_lines: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_strength")]
    pub total_strength: f64,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    #[serde(default)]
    pub sketches: Vec<ControlSketch>,
}

impl SketchSet {
    pub fn new(n_lines: usize, total_strength: f64, sketches: Vec<ControlSketch>) -> Self {
        Self {
            n_lines,
            sigma: default_sigma(),
            epsilon: default_epsilon(),
            total_strength,
            variance_mode: VarianceMode::Literal,
            sketches,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| {
            Error::InvalidSketch(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    fn check_scalars(&self) -> Result<()> {
        if self.n_lines == 0 {
            return Err(Error::InvalidSketch("n_lines must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidSketch(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidSketch(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.total_strength.is_finite() && self.total_strength >= 0.0) {
            return Err(Error::InvalidSketch(format!(
                "total_strength must be >= 0, got {}",
                self.total_strength
            )));
        }
        Ok(())
    }

    /// Validates the set and clips ends past the last line, logging a warning for each.
    pub fn normalized(&self) -> Result<SketchSet> {
        self.check_scalars()?;
        let last = self.n_lines - 1;
        let mut out = self.clone();
        for (i, sk) in out.sketches.iter_mut().enumerate() {
            if sk.start > sk.end {
                return Err(Error::InvalidSketch(format!(
                    "sketch {i} ({}): start {} > end {}",
                    sk.code, sk.start, sk.end
                )));
            }
            if sk.start > last {
                return Err(Error::InvalidSketch(format!(
                    "sketch {i} ({}): start {} outside 0..{}",
                    sk.code, sk.start, self.n_lines
                )));
            }
            if sk.end > last {
                log::warn!("sketch {i} ({}): end {} clipped to {last}", sk.code, sk.end);
                sk.end = last;
            }
        }
        Ok(out)
    }
}

fn variance(sketch: &ControlSketch, sigma: f64, epsilon: f64, mode: VarianceMode) -> f64 {
    let span = (sketch.end - sketch.start) as f64 + epsilon;
    match mode {
        VarianceMode::Literal => sigma / (span * span),
        VarianceMode::Proportional => sigma * (span / 2.0).powi(2),
    }
}

/// Raw per-line weights of one sketch: a zero-mean normal pdf evaluated at `n − m`.
///
/// If every entry underflows to zero the profile is returned normalized
/// from log-space instead, so the peak still survives.
pub fn sketch_weight_profile(
    sketch: &ControlSketch,
    n_lines: usize,
    sigma: f64,
    epsilon: f64,
    mode: VarianceMode,
) -> Result<Vec<f64>> {
    if n_lines == 0 || sketch.start > sketch.end || sketch.end >= n_lines {
        return Err(Error::InvalidSketch(format!(
            "range {}..={} invalid for {n_lines} lines",
            sketch.start, sketch.end
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidSketch(format!(
            "sigma and epsilon must be positive, got {sigma} and {epsilon}"
        )));
    }
    let v = variance(sketch, sigma, epsilon, mode);
    let mid = (sketch.start + sketch.end) as f64 / 2.0;
    let log_pdf: Vec<f64> = (0..n_lines)
        .map(|n| {
            let d = n as f64 - mid;
            -d * d / (2.0 * v) - 0.5 * (2.0 * PI * v).ln()
        })
        .collect();
    let raw: Vec<f64> = log_pdf.iter().map(|l| l.exp()).collect();
    if raw.iter().any(|&w| w > 0.0) && raw.iter().all(|w| w.is_finite()) {
        return Ok(raw);
    }
    let lse = log_sum_exp(&log_pdf);
    Ok(log_pdf.iter().map(|l| (l - lse).exp()).collect())
}

/// Per-code weight curve across lines, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCurve {
    pub code: ControlCode,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePlan {
    pub total_strength: f64,
    pub lines: Vec<ControlConfig>,
    /// Codes in order of first appearance in the sketch set.
    pub curves: Vec<CodeCurve>,
}

impl LinePlan {
    /// A plan with no control on any line.
    pub fn uncontrolled(n_lines: usize) -> Self {
        Self {
            total_strength: 0.0,
            lines: vec![ControlConfig::uncontrolled(); n_lines],
            curves: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn curve(&self, code: &ControlCode) -> Option<&[f64]> {
        self.curves
            .iter()
            .find(|c| &c.code == code)
            .map(|c| c.weights.as_slice())
    }

    pub fn codes(&self) -> impl Iterator<Item = &ControlCode> {
        self.curves.iter().map(|c| &c.code)
    }
}

fn normalize_in_place(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 && s.is_finite() {
        w.iter_mut().for_each(|x| *x /= s);
    }
}

/// Compiles a sketch set into one control config per line.
pub fn compile_plan(set: &SketchSet) -> Result<LinePlan> {
    let set = set.normalized()?;
    let n = set.n_lines;
    let mut curves: Vec<CodeCurve> = Vec::new();
    for sketch in &set.sketches {
        let profile = sketch_weight_profile(sketch, n, set.sigma, set.epsilon, set.variance_mode)?;
        let idx = match curves.iter().position(|c| c.code == sketch.code) {
            Some(i) => i,
            None => {
                curves.push(CodeCurve {
                    code: sketch.code.clone(),
                    weights: vec![0.0; n],
                });
                curves.len() - 1
            }
        };
        let acc = &mut curves[idx].weights;
        acc.iter_mut().zip(&profile).for_each(|(a, p)| *a += p);
        normalize_in_place(acc);
    }

    let lines = (0..n)
        .map(|line| {
            if curves.iter().all(|c| c.weights[line] < UNCONTROLLED_BELOW)
                || set.total_strength == 0.0
            {
                return Ok(ControlConfig::uncontrolled());
            }
            let raw: Vec<(ControlCode, f64)> = curves
                .iter()
                .filter(|c| c.weights[line] > 0.0)
                .map(|c| (c.code.clone(), c.weights[line]))
                .collect();
            ControlConfig::new(raw, set.total_strength)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LinePlan {
        total_strength: set.total_strength,
        lines,
        curves,
    })
}

/// First line where `c2`'s weight reaches `c1`'s, among lines where `c2` is active.
pub fn crossover_index(
    plan: &LinePlan,
    c1: &ControlCode,
    c2: &ControlCode,
) -> Result<Option<usize>> {
    let w1 = plan
        .curve(c1)
        .ok_or_else(|| Error::UnknownControlCode(c1.to_string()))?;
    let w2 = plan
        .curve(c2)
        .ok_or_else(|| Error::UnknownControlCode(c2.to_string()))?;
    Ok(w1.iter().zip(w2).position(|(a, b)| *b > 0.0 && b >= a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> ControlCode {
        ControlCode::new(s).unwrap()
    }

    fn sk(c: &str, start: usize, end: usize) -> ControlSketch {
        ControlSketch {
            code: code(c),
            start,
            end,
        }
    }

    #[test]
    fn full_range_profile_is_symmetric() {
        let p = sketch_weight_profile(&sk("a", 0, 6), 7, 1.0, 1e-3, VarianceMode::Literal).unwrap();
        for i in 0..7 {
            assert_eq!(p[i], p[6 - i]);
        }
        for i in 3..6 {
            assert!(p[i] > p[i + 1]);
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        for bad in [
            SketchSet::new(0, 1.0, vec![]),
            SketchSet::new(5, 1.0, vec![sk("a", 3, 2)]),
            SketchSet::new(5, 1.0, vec![sk("a", 5, 6)]),
        ] {
            assert!(matches!(compile_plan(&bad), Err(Error::InvalidSketch(_))));
        }
        let mut s = SketchSet::new(5, 1.0, vec![sk("a", 0, 1)]);
        s.sigma = 0.0;
        assert!(matches!(compile_plan(&s), Err(Error::InvalidSketch(_))));
    }

    #[test]
    fn end_past_last_line_is_clipped() {
        let clipped = compile_plan(&SketchSet::new(10, 1.0, vec![sk("a", 4, 10)])).unwrap();
        let exact = compile_plan(&SketchSet::new(10, 1.0, vec![sk("a", 4, 9)])).unwrap();
        assert_eq!(clipped, exact);
    }

    #[test]
    fn duplicate_sketches_are_idempotent() {
        let one = compile_plan(&SketchSet::new(8, 2.0, vec![sk("a", 1, 4)])).unwrap();
        let two =
            compile_plan(&SketchSet::new(8, 2.0, vec![sk("a", 1, 4), sk("a", 1, 4)])).unwrap();
        for (x, y) in one
            .curve(&code("a"))
            .unwrap()
            .iter()
            .zip(two.curve(&code("a")).unwrap())
        {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn single_code_lines_carry_full_strength() {
        let plan = compile_plan(&SketchSet::new(6, 3.0, vec![sk("a", 0, 2)])).unwrap();
        for line in plan.lines.iter().filter(|l| !l.is_uncontrolled()) {
            assert_eq!(line.entries().len(), 1);
            assert_eq!(line.strength_of(&code("a")), Some(3.0));
        }
    }

    #[test]
    fn empty_sketch_list_gives_uncontrolled_plan() {
        let plan = compile_plan(&SketchSet::new(4, 1.0, vec![])).unwrap();
        assert_eq!(
            plan,
            LinePlan {
                total_strength: 1.0,
                ..LinePlan::uncontrolled(4)
            }
        );
    }

    #[test]
    fn far_lines_are_uncontrolled() {
        // a wide span under the literal variance is sharply peaked
        let plan = compile_plan(&SketchSet::new(10, 1.0, vec![sk("a", 0, 9)])).unwrap();
        assert!(!plan.lines[4].is_uncontrolled());
        assert!(plan.lines[0].is_uncontrolled());
    }

    #[test]
    fn mirrored_plan_crosses_at_midpoint() {
        let plan =
            compile_plan(&SketchSet::new(10, 1.0, vec![sk("a", 0, 4), sk("b", 5, 9)])).unwrap();
        assert_eq!(
            crossover_index(&plan, &code("a"), &code("b")).unwrap(),
            Some(5)
        );
        assert_eq!(
            crossover_index(&plan, &code("b"), &code("a")).unwrap(),
            Some(0)
        );
        assert!(matches!(
            crossover_index(&plan, &code("a"), &code("z")),
            Err(Error::UnknownControlCode(_))
        ));
    }

    #[test]
    fn dominated_code_never_crosses() {
        // both curves sum to 1 after compilation, so build one by hand
        let plan = LinePlan {
            total_strength: 1.0,
            lines: vec![ControlConfig::uncontrolled(); 3],
            curves: vec![
                CodeCurve {
                    code: code("a"),
                    weights: vec![0.5, 0.3, 0.2],
                },
                CodeCurve {
                    code: code("b"),
                    weights: vec![0.1, 0.2, 0.0],
                },
            ],
        };
        assert_eq!(
            crossover_index(&plan, &code("a"), &code("b")).unwrap(),
            None
        );
    }

    #[test]
    fn proportional_mode_widens_with_span() {
        let narrow =
            sketch_weight_profile(&sk("a", 4, 4), 9, 1.0, 1e-3, VarianceMode::Proportional)
                .unwrap();
        let wide = sketch_weight_profile(&sk("a", 2, 6), 9, 1.0, 1e-3, VarianceMode::Proportional)
            .unwrap();
        let share = |p: &[f64]| p[4] / p.iter().sum::<f64>();
        assert!(share(&narrow) > share(&wide));
    }

    #[test]
    fn sketch_file_parses_with_defaults() {
        let s = SketchSet::from_json_str(
            r#"{"n_lines": 3, "total_strength": 2, "sketches": [{"code": "Sports", "start": 0, "end": 2}]}"#,
        )
        .unwrap();
        assert_eq!(s.sigma, 1.0);
        assert_eq!(s.epsilon, 1e-3);
        assert_eq!(s.variance_mode, VarianceMode::Literal);
        assert!(matches!(
            SketchSet::from_json_str("{\"n_lines\": 3,"),
            Err(Error::InvalidSketch(_))
        ));
    }
}
