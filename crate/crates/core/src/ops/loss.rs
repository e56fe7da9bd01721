//! Softmax and cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|z| (*z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(z)`, shifted by the maximum.
pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|z| (*z - max).exp()).sum::<T>().ln()
}

/// Returns `(−log p[label], p)`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::input(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let loss = log_sum_exp(z) - z[label];
    let probs = Tensor::new(logits.shape(), softmax(z))?;
    Ok((loss.max(T::zero()), probs))
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient of cross-entropy with respect to the logits: `p − onehot(label)`.
pub fn xent_grad<T: Scalar>(probs: &[T], label: usize) -> Vec<T> {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| if k == label { *p - T::one() } else { *p })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0f64, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0f32, 2.0]), 0);
        assert_eq!(argmax(&[-1.0f64]), 0);
    }

    #[test]
    fn symmetric_logits() {
        let (loss, p) = softmax_xent(&Tensor::<f64>::vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn two_zero_logits() {
        let (loss, p) = softmax_xent(&Tensor::<f64>::vector(vec![2.0, 0.0]), 0).unwrap();
        let e2 = 2f64.exp();
        assert!((p.data()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p.data()[0] - 0.8808).abs() < 1e-4);
        assert!((loss - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn shift_invariance() {
        let z = Tensor::<f64>::vector(vec![0.3, -1.2, 2.5]);
        let zs = Tensor::<f64>::vector(z.data().iter().map(|v| v + 100.0).collect());
        let (l1, p1) = softmax_xent(&z, 2).unwrap();
        let (l2, p2) = softmax_xent(&zs, 2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p1.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_xent(&Tensor::<f64>::vector(vec![0.0, 1.0]), 2),
            Err(Error::Input(_))
        ));
    }
}
