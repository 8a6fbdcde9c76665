//! Minimal dense-tensor engine with reverse-mode differentiation.

pub mod gradcheck;
mod kernels;
pub mod optim;
mod params;
mod tape;
mod value;

pub use optim::{cosine_lr, Adam, Sgd};
pub use params::{BoundParams, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use value::Tensor;

use crate::error::{Error, Result};

/// Softmax of `logits / temperature`, computed with max subtraction.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    tape::sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_and_closed_form() {
        let p = softmax_t(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_t(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_low_temperature_is_nearly_one_hot() {
        let p = softmax_t(&[1.0, 0.0], 0.02).unwrap();
        assert!(p[0] >= 1.0 - 2.0 * (-50f64).exp());
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_t(&[1.0], 0.0).is_err());
        assert!(softmax_t(&[1.0], -1.0).is_err());
        assert!(softmax_t(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..12),
            log_t in -3.0f64..3.0,
        ) {
            let t = 10f64.powf(log_t);
            let p = softmax_t(&logits, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_preserves_unique_argmax(
            logits in proptest::collection::vec(-10.0f64..10.0, 2..10),
            log_t in -3.0f64..3.0,
        ) {
            let top = argmax(&logits).unwrap();
            prop_assume!(logits.iter().enumerate().all(|(i, &v)| i == top || v < logits[top]));
            let p = softmax_t(&logits, 10f64.powf(log_t)).unwrap();
            prop_assert_eq!(argmax(&p), Some(top));
        }
    }
}
