//! Momentum SGD for per-patch training and for ECN fine-tuning.
//!
//! Both phases share one step: a sample is a list of patches with one label,
//! the branch logits are summed before the softmax, and every branch receives
//! the same upstream gradient. A single-patch sample is plain cross-entropy.

pub mod config;
pub mod logfile;
pub mod sgd;
pub mod trainer;

pub use config::{parse_key_values, EcnConfig, SgdConfig};
pub use logfile::TrainLog;
pub use sgd::{lr_at, sgd_step, sgd_update};
pub use trainer::{
    check_warm_start, ecn_samples, finetune_ecn, patch_accuracy, patch_samples, select_warm_start, train_simple,
    Sample, TrainStepReport, Trainer,
};

use crate::error::{Error, Result};
use crate::ops::loss::{log_sum_exp, softmax, xent_grad};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct EcnLoss<T> {
    pub loss: T,
    /// Softmax of the summed branch logits.
    pub probs: Vec<T>,
    /// Gradient with respect to each branch's logits; identical for all branches.
    pub grad: Vec<T>,
}

/// `−log softmax(Σ_n z_n)[label]` over `n` branches of K logits each.
pub fn ecn_loss<T: Scalar, L: AsRef<[T]>>(branches: &[L], label: usize, n: usize) -> Result<EcnLoss<T>> {
    if branches.len() != n {
        return Err(Error::config(format!("expected {n} branches, got {}", branches.len())));
    }
    let k = branches[0].as_ref().len();
    if branches.iter().any(|b| b.as_ref().len() != k) {
        return Err(Error::input("branch logits differ in length"));
    }
    if label >= k {
        return Err(Error::input(format!("label {label} out of range for {k} classes")));
    }
    let mut sum = vec![T::zero(); k];
    for b in branches {
        sum.iter_mut().zip(b.as_ref()).for_each(|(s, z)| *s += *z);
    }
    let loss = (log_sum_exp(&sum) - sum[label]).max(T::zero());
    let probs = softmax(&sum);
    let grad = xent_grad(&probs, label);
    Ok(EcnLoss { loss, probs, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::loss::softmax_xent;
    use crate::tensor::Tensor;

    #[test]
    fn symmetric_two_branch() {
        let l = ecn_loss(&[vec![1.0f64, 0.0], vec![0.0, 1.0]], 0, 2).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn single_branch_is_xent() {
        let z = vec![0.3f64, -1.2, 2.5, 0.0];
        let l = ecn_loss(std::slice::from_ref(&z), 2, 1).unwrap();
        let (x, p) = softmax_xent(&Tensor::vector(z), 2).unwrap();
        assert_eq!(l.loss, x);
        assert_eq!(l.probs, p.data());
    }

    #[test]
    fn identical_branches_scale_logits() {
        let z = vec![0.2f64, -0.7, 1.1];
        let l = ecn_loss(&[z.clone(), z.clone(), z.clone()], 1, 3).unwrap();
        let expect = softmax(&z.iter().map(|v| 3.0 * v).collect::<Vec<_>>());
        for (a, b) in l.probs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_branch_count() {
        assert!(matches!(ecn_loss(&[vec![0.0f64, 1.0]], 0, 2), Err(Error::Config(_))));
        assert!(ecn_loss(&[vec![0.0f64, 1.0]], 2, 1).is_err());
    }
}
