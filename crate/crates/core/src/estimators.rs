//! Per-token reverse-KL estimators.
//!
//! All estimators work on the log-ratio `R = ln pi_T(token) - ln pi(token)` at
//! the sampled token:
//!
//! - `k1`: value `-R`. Unbiased for the KL value, high variance; only used for
//!   value estimation and as the token-level reward in reward shaping.
//! - `k2`: value `R^2 / 2`. Biased value, but its gradient coefficient `-R`
//!   estimates the exact KL gradient without bias.
//! - `k3`: value `e^R - R - 1`. Unbiased nonnegative value; its gradient
//!   coefficient `-(e^R - 1)` is biased.
//! - `top-K`: full-vocabulary KL against the teacher distribution restricted
//!   to its K most probable tokens and renormalized.
//!
//! A gradient coefficient `c` means the per-token parameter gradient of the
//! KL penalty is `c * d/dtheta[ ln pi(token) ]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to zeroed teacher probabilities inside logarithms. Keeps the
/// top-K penalty on out-of-top-K tokens finite but large, and is shared with
/// the exact oracle so both sides agree on out-of-support handling.
pub const TEACHER_PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    K1,
    K2,
    K3,
    TopK { k: usize },
}

impl EstimatorKind {
    pub fn name(&self) -> String {
        match self {
            EstimatorKind::K1 => "k1".into(),
            EstimatorKind::K2 => "k2".into(),
            EstimatorKind::K3 => "k3".into(),
            EstimatorKind::TopK { k } => format!("topk({k})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EstimatorKind::TopK { k } = self {
            if *k < 1 {
                return Err(Error::InvalidArgument("top-K requires K >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Direct estimator value: `-R`. May be negative per sample; its mean over
/// student samples is the exact per-context reverse KL.
pub fn k1_value(log_ratio: f64) -> f64 {
    -log_ratio
}

/// `R^2 / 2`, always nonnegative.
pub fn k2_value(log_ratio: f64) -> f64 {
    0.5 * log_ratio * log_ratio
}

/// `e^R - R - 1`, always nonnegative.
pub fn k3_value(log_ratio: f64) -> f64 {
    log_ratio.exp() - log_ratio - 1.0
}

/// Gradient coefficient of the KL penalty for the sampled-token estimators.
///
/// `k2 -> -R` and `k3 -> -(e^R - 1)`. Differentiating the direct estimator
/// through the score function also yields `-R`, so `k1` shares `k2`'s
/// coefficient; the loss assembly still refuses `k1` as a standalone penalty.
/// Top-K has no single-token coefficient (its gradient spans the vocabulary).
pub fn grad_coefficient(kind: EstimatorKind, log_ratio: f64) -> Result<f64> {
    match kind {
        EstimatorKind::K1 | EstimatorKind::K2 => Ok(-log_ratio),
        EstimatorKind::K3 => Ok(-(log_ratio.exp() - 1.0)),
        EstimatorKind::TopK { .. } => Err(Error::InvalidArgument(
            "top-K has no per-token gradient coefficient; use the full-vocabulary form".into(),
        )),
    }
}

/// Restrict a teacher distribution to its K most probable tokens and
/// renormalize. Ties at the K-th rank break toward the lowest token id.
pub fn topk_teacher_renorm(teacher_probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 || k > teacher_probs.len() {
        return Err(Error::InvalidArgument(format!(
            "K must be in 1..=V, got {k} for V={}",
            teacher_probs.len()
        )));
    }
    let sum: f64 = teacher_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "teacher probabilities must sum to 1 (got {sum})"
        )));
    }
    let mut order: Vec<usize> = (0..teacher_probs.len()).collect();
    order.sort_by(|&a, &b| {
        teacher_probs[b]
            .partial_cmp(&teacher_probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });
    let kept = &order[..k];
    let mass: f64 = kept.iter().map(|&v| teacher_probs[v]).sum();
    let mut renormed = vec![0.0; teacher_probs.len()];
    for &v in kept {
        renormed[v] = teacher_probs[v] / mass;
    }
    Ok(renormed)
}

/// Full-vocabulary KL from the student distribution to a (possibly truncated)
/// teacher distribution: `sum_v s_v * ln(s_v / t_v)`.
///
/// Terms with `s_v = 0` contribute 0; zeroed teacher entries are floored at
/// [`TEACHER_PROB_FLOOR`] inside the log, so the value stays finite but large.
pub fn topk_kl_value(student_probs: &[f64], teacher_renormed: &[f64]) -> Result<f64> {
    let sum: f64 = student_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "student probabilities must sum to 1 (got {sum})"
        )));
    }
    Ok(student_probs
        .iter()
        .zip(teacher_renormed)
        .filter(|(&s, _)| s > 0.0)
        .map(|(&s, &t)| s * (s.ln() - t.max(TEACHER_PROB_FLOOR).ln()))
        .sum())
}

/// Per-vocabulary-entry weights `w_v = s_v * ln(s_v / t_v)` such that the
/// top-K KL gradient is `sum_v w_v * d/dtheta[ ln s_v ]`.
pub fn topk_kl_grad_coefs(student_probs: &[f64], teacher_renormed: &[f64]) -> Vec<f64> {
    student_probs
        .iter()
        .zip(teacher_renormed)
        .map(|(&s, &t)| {
            if s > 0.0 {
                s * (s.ln() - t.max(TEACHER_PROB_FLOOR).ln())
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matched_distributions_give_zero() {
        assert_eq!(k1_value(0.0), 0.0);
        assert_eq!(k2_value(0.0), 0.0);
        assert_eq!(k3_value(0.0), 0.0);
        assert_eq!(grad_coefficient(EstimatorKind::K2, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn k1_is_negated_log_ratio() {
        // teacher logp -1, student logp -2 -> R = 1 -> value -1.
        let r = -1.0f64 - (-2.0);
        assert_eq!(k1_value(r), -1.0);
    }

    #[test]
    fn k2_value_arithmetic() {
        assert!((k2_value(0.2) - 0.02).abs() < 1e-15);
        assert!((k2_value(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn k3_value_arithmetic() {
        assert!((k3_value(1.0) - (std::f64::consts::E - 2.0)).abs() < 1e-12);
        assert!((k3_value(1.0) - 0.718282).abs() < 1e-6);
        assert!((k3_value(-1.0) - 0.367879_f64).abs() < 1e-6);
    }

    #[test]
    fn grad_coefficients_match_derivations() {
        assert!((grad_coefficient(EstimatorKind::K2, 1.0).unwrap() + 1.0).abs() < 1e-15);
        let k3 = grad_coefficient(EstimatorKind::K3, 1.0).unwrap();
        assert!((k3 + (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((k3 + 1.718282).abs() < 1e-6);
        assert!(grad_coefficient(EstimatorKind::TopK { k: 2 }, 1.0).is_err());
    }

    #[test]
    fn renorm_two_of_three() {
        let out = topk_teacher_renorm(&[0.5, 0.3, 0.2], 2).unwrap();
        assert!((out[0] - 0.625).abs() < 1e-12);
        assert!((out[1] - 0.375).abs() < 1e-12);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn renorm_full_k_is_identity() {
        let input = [0.4, 0.1, 0.3, 0.2];
        let out = topk_teacher_renorm(&input, 4).unwrap();
        for (a, b) in out.iter().zip(&input) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn renorm_uniform_tie_breaks_by_id() {
        let out = topk_teacher_renorm(&[0.25, 0.25, 0.25, 0.25], 2).unwrap();
        assert_eq!(out, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn kl_zero_for_identical() {
        let p = [0.7, 0.2, 0.1];
        assert!(topk_kl_value(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_two_point() {
        let student = [0.5, 0.5];
        let teacher = [0.9, 0.1];
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let got = topk_kl_value(&student, &teacher).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.510826).abs() < 1e-6);
    }

    #[test]
    fn kl_floors_zeroed_teacher_entries() {
        let student = [0.5, 0.5];
        let teacher = [1.0, 0.0];
        let v = topk_kl_value(&student, &teacher).unwrap();
        assert!(v.is_finite());
        assert!(v > 1.0, "out-of-top-K mass should be penalized hard, got {v}");
    }

    proptest! {
        #[test]
        fn k2_k3_nonnegative(r in -6.0f64..6.0) {
            prop_assert!(k2_value(r) >= 0.0);
            prop_assert!(k3_value(r) >= 0.0);
        }

        #[test]
        fn renorm_sums_to_one_with_at_most_k_nonzero(
            raw in proptest::collection::vec(0.01f64..2.0, 2..8),
            k_seed in 0usize..100,
        ) {
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let k = 1 + k_seed % probs.len();
            let out = topk_teacher_renorm(&probs, k).unwrap();
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(out.iter().filter(|&&p| p != 0.0).count() <= k);
        }
    }
}
