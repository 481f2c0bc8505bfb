//! Numerically careful probability primitives.

use crate::error::{Error, Result};
use crate::types::{LogitVector, ProbVector, TokenId};

/// `ln Σ exp(x_i)` with max-subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(temperature))
    }
}

/// Softmax of finite scores at the given temperature.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<ProbVector> {
    check_temperature(temperature)?;
    Ok(ProbVector::from_normalized(softmax_slice(
        logits.as_slice(),
        temperature,
    )?))
}

pub(crate) fn softmax_slice(xs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if xs.is_empty() || xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits);
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let denom: f64 = out.iter().sum();
    for v in &mut out {
        *v /= denom;
    }
    Ok(out)
}

/// Log-softmax of finite scores at the given temperature.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits);
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let lse = log_sum_exp(&scaled);
    Ok(scaled.into_iter().map(|x| x - lse).collect())
}

/// Rescales non-negative weights so they sum to `target_sum`, keeping proportions.
pub fn normalize_weights(raw: &[f64], target_sum: f64) -> Result<Vec<f64>> {
    if raw.iter().any(|w| !w.is_finite() || *w < 0.0) || !target_sum.is_finite() || target_sum < 0.0
    {
        return Err(Error::InvalidParams(
            "weights must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        if target_sum == 0.0 {
            return Ok(vec![0.0; raw.len()]);
        }
        return Err(Error::DegenerateWeights);
    }
    if sum == target_sum {
        return Ok(raw.to_vec());
    }
    Ok(raw.iter().map(|w| w / sum * target_sum).collect())
}

/// Index of the maximum value; exact ties resolve to the lowest index.
///
/// Panics on an empty slice.
pub fn argmax_tiebreak(values: &[f64]) -> TokenId {
    assert!(!values.is_empty(), "argmax of empty vector");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    TokenId::from(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&lv(&[0.0; 4]), 1.0).unwrap();
        assert_eq!(p.as_slice(), &[0.25; 4]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&lv(&[1000.0, 0.0]), 1.0).unwrap();
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-15);
        assert!(p.as_slice()[1] >= 0.0 && p.as_slice()[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_exponentiation() {
        let x = [1f64.ln(), 3f64.ln()];
        let p = softmax(&lv(&x), 1.0).unwrap();
        // oracle: exp(x_i) / Σ exp(x_j) without max-subtraction
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        for (got, xi) in p.as_slice().iter().zip(x) {
            assert!((got - xi.exp() / z).abs() < 1e-15);
        }
        assert!((p.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(
            softmax(&lv(&[0.0]), 0.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn normalize_weights_examples() {
        assert_eq!(normalize_weights(&[1.0, 1.0], 2.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            normalize_weights(&[2.0, 6.0], 1.0).unwrap(),
            vec![0.25, 0.75]
        );
        assert_eq!(
            normalize_weights(&[0.0, 0.0], 1.0),
            Err(Error::DegenerateWeights)
        );
        assert_eq!(normalize_weights(&[0.0, 0.0], 0.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_tiebreak(&[0.1, 0.9, 0.0]), TokenId(1));
        assert_eq!(argmax_tiebreak(&[0.5, 0.5]), TokenId(0));
        assert_eq!(argmax_tiebreak(&[-1.0, -1.0, 3.0]), TokenId(2));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..64),
            k in -100.0f64..100.0,
        ) {
            let a = softmax(&lv(&xs), 1.0).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + k).collect();
            let b = softmax(&lv(&shifted), 1.0).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_is_distribution_and_keeps_argmax(
            xs in proptest::collection::vec(-1e3f64..1e3, 1..64),
            t in 0.05f64..10.0,
        ) {
            let p = softmax(&lv(&xs), t).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(p.as_slice().iter().all(|v| *v >= 0.0));
            prop_assert_eq!(argmax_tiebreak(p.as_slice()), argmax_tiebreak(&xs));
        }

        #[test]
        fn normalize_is_idempotent(
            raw in proptest::collection::vec(0.0f64..10.0, 1..16),
            target in 0.1f64..5.0,
        ) {
            prop_assume!(raw.iter().any(|w| *w > 0.0));
            let once = normalize_weights(&raw, target).unwrap();
            let sum: f64 = once.iter().sum();
            prop_assert!((sum - target).abs() <= 1e-12);
            let twice = normalize_weights(&once, target).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
