use serde::{Deserialize, Serialize};

use super::{shape_err, LayerKind, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

impl LossKind {
    pub fn for_head(head: LayerKind) -> Option<Self> {
        match head {
            LayerKind::DenseSoftmax => Some(Self::CrossEntropy),
            LayerKind::DenseLinear => Some(Self::Mse),
            _ => None,
        }
    }
}

/// Network output for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Probabilities(Vec<f64>),
    Value(f64),
}

impl Output {
    pub fn predicted_class(&self) -> Option<usize> {
        match self {
            Self::Probabilities(p) => (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))),
            Self::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Probabilities(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// `−ln p[target]` for probabilities, `(output − target)²` for values.
pub fn loss(output: &Output, target: &Target, kind: LossKind) -> Result<f64, NnError> {
    match (output, target, kind) {
        (Output::Probabilities(p), Target::Class(c), LossKind::CrossEntropy) => {
            let pc = p.get(*c).ok_or_else(|| shape_err(format!("class {c} outside {} outputs", p.len())))?;
            Ok(-pc.max(f64::MIN_POSITIVE).ln())
        }
        (Output::Value(y), Target::Value(t), LossKind::Mse) => Ok((y - t).powi(2)),
        (Output::Probabilities(_), _, _) => Err(NnError::LossMismatch { loss: kind, head: LayerKind::DenseSoftmax }),
        (Output::Value(_), _, _) => Err(NnError::LossMismatch { loss: kind, head: LayerKind::DenseLinear }),
    }
}

pub fn mae(output: f64, target: f64) -> f64 {
    (output - target).abs()
}

/// Numerically stable softmax, in place.
pub(crate) fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(logits)`.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn uniform_cross_entropy_is_ln10() {
        let out = Output::Probabilities(vec![0.1; 10]);
        for c in 0..10 {
            let l = loss(&out, &Target::Class(c), LossKind::CrossEntropy).unwrap();
            assert!((l - 10f64.ln()).abs() < 1e-12);
            assert!((l - 2.302585).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_regression_has_zero_loss() {
        let l = loss(&Output::Value(13.13), &Target::Value(13.13), LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(mae(13.13, 13.13), 0.0);
        assert!((mae(10.0, 13.13) - 3.13).abs() < 1e-12);
    }

    #[test]
    fn mismatched_kinds_fail() {
        assert!(matches!(
            loss(&Output::Value(1.0), &Target::Value(1.0), LossKind::CrossEntropy),
            Err(NnError::LossMismatch { .. })
        ));
        assert!(loss(&Output::Probabilities(vec![0.5, 0.5]), &Target::Class(1), LossKind::Mse).is_err());
        assert!(loss(&Output::Probabilities(vec![0.5, 0.5]), &Target::Class(2), LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(Output::Probabilities(vec![0.2, 0.4, 0.4]).predicted_class(), Some(1));
    }

    proptest! {
        #[test]
        fn softmax_is_distribution(mut v in prop::collection::vec(-500.0f64..500.0, 2..20)) {
            let lse = log_sum_exp(&v);
            let first = v[0];
            softmax(&mut v);
            prop_assert!(v.iter().all(|&p| p >= 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((v[0].max(1e-300).ln() - (first - lse)).abs() < 1e-9 || v[0] < 1e-300);
        }
    }
}
