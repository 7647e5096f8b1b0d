//! Softmax and the two losses of the reconstruction objective.

use crate::error::{Error, Result};

/// Probability floor applied before the log in SCCE.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// d mse / d pred
pub fn mse_grad(pred: &[f64], target: &[f64], out: &mut [f64]) {
    let scale = 2.0 / pred.len() as f64;
    for ((o, p), t) in out.iter_mut().zip(pred).zip(target) {
        *o = scale * (p - t);
    }
}

/// Sparse categorical cross-entropy: `-ln max(probs[target], 1e-12)`.
pub fn scce(probs: &[f64], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::IndexOutOfRange {
        index: target,
        len: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// d scce / d probs; zero below the floor where the loss is constant.
pub fn scce_grad(probs: &[f64], target: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let p = probs[target];
    if p > PROB_FLOOR {
        out[target] = -1.0 / p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), 2.0);
        let a = [0.3, -1.2, 4.0];
        let b = [1.0, 0.5, -2.0];
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn scce_examples() {
        assert_eq!(scce(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((scce(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((scce(&[1.0 - 1e-30, 1e-30], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-12);
        assert!(matches!(
            scce(&[0.5, 0.5], 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            z in proptest::collection::vec(-50.0f64..50.0, 1..12),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&z);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
