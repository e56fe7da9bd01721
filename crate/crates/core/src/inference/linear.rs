//! One-vs-rest linear classifier on image-level features.
//!
//! Features are standardized, then each class gets a hinge-loss scorer with
//! L2 regularization trained by full-batch subgradient descent. The
//! regularization strength is picked by stratified k-fold cross-validation.

use serde::{Deserialize, Serialize};

use super::{ClassScores, ScoreKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHeadConfig {
    /// Candidate regularization strengths, tried in order; ties keep the earlier one.
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub epochs: usize,
    /// Initial subgradient step, decayed as 1/√(t+1).
    pub step: f64,
}

impl Default for LinearHeadConfig {
    fn default() -> Self {
        LinearHeadConfig {
            lambdas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            folds: 5,
            epochs: 300,
            step: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation per feature (1 for constant features).
    pub inv_std: Vec<f64>,
    /// K rows of feature weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub lambda: f64,
    /// Mean held-out accuracy per candidate lambda.
    pub cv_accuracy: Vec<(f64, f64)>,
}

impl LinearHead {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    fn scores_std(&self, z: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    }
}

pub fn classify_linear(head: &LinearHead, feature: &[f64]) -> Result<ClassScores> {
    if feature.len() != head.dim() {
        return Err(Error::input(format!(
            "feature has length {}, head expects {}",
            feature.len(),
            head.dim()
        )));
    }
    Ok(ClassScores::new(head.scores_std(&head.standardize(feature)), ScoreKind::Score))
}

fn standardizer(x: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x {
        var.iter_mut().zip(*r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let inv_std = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 { 1.0 / sd } else { 1.0 }
        })
        .collect();
    (mean, inv_std)
}

/// Binary hinge scorer with targets ±1; returns the iterate with the lowest objective.
fn train_binary(z: &[Vec<f64>], y: &[f64], lambda: f64, cfg: &LinearHeadConfig) -> (Vec<f64>, f64) {
    let d = z[0].len();
    let n = z.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let mut best = (f64::INFINITY, w.clone(), b);
    for t in 0..=cfg.epochs {
        let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        let mut gb = 0.0;
        let mut hinge = 0.0;
        for (x, &yi) in z.iter().zip(y) {
            let margin = yi * (w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b);
            if margin < 1.0 {
                hinge += 1.0 - margin;
                gw.iter_mut().zip(x).for_each(|(g, v)| *g -= yi * v / n);
                gb -= yi / n;
            }
        }
        let obj = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + hinge / n;
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
        if t == cfg.epochs {
            break;
        }
        let eta = cfg.step / ((t + 1) as f64).sqrt();
        w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= eta * g);
        b -= eta * gb;
    }
    (best.1, best.2)
}

fn fit(x: &[&[f64]], labels: &[usize], k: usize, lambda: f64, cfg: &LinearHeadConfig) -> LinearHead {
    let (mean, inv_std) = standardizer(x);
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&inv_std).map(|((v, m), s)| (v - m) * s).collect())
        .collect();
    let mut weights = Vec::with_capacity(k);
    let mut bias = Vec::with_capacity(k);
    for c in 0..k {
        let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
        let (w, b) = train_binary(&z, &y, lambda, cfg);
        weights.push(w);
        bias.push(b);
    }
    LinearHead {
        mean,
        inv_std,
        weights,
        bias,
        lambda,
        cv_accuracy: Vec::new(),
    }
}

/// Trains on `features` (rows) with labels in `[0, k)`.
pub fn train_linear_head(
    features: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    cfg: &LinearHeadConfig,
) -> Result<LinearHead> {
    if features.len() != labels.len() {
        return Err(Error::input("feature and label counts differ"));
    }
    if features.is_empty() {
        return Err(Error::config("no training features"));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::input("features must be non-empty and equally long"));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::input(format!("label {l} out of range for {k} classes")));
    }
    let present = (0..k).filter(|c| labels.contains(c)).count();
    if present < 2 {
        return Err(Error::config("linear head needs at least two classes in the training set"));
    }
    if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|&l| !(l > 0.0)) || cfg.folds == 0 {
        return Err(Error::config("lambda grid must be non-empty and positive; folds ≥ 1"));
    }

    // Stratified fold assignment: the r-th example of each class goes to fold r mod folds.
    let folds = cfg.folds.min(features.len());
    let mut seen = vec![0usize; k];
    let fold_of: Vec<usize> = labels
        .iter()
        .map(|&l| {
            seen[l] += 1;
            (seen[l] - 1) % folds
        })
        .collect();

    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    let mut cv = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let mut accs = Vec::new();
        for f in 0..folds {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| fold_of[i] != f);
            if train.is_empty() || test.is_empty() {
                continue;
            }
            let tx: Vec<&[f64]> = train.iter().map(|&i| rows[i]).collect();
            let ty: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let head = fit(&tx, &ty, k, lambda, cfg);
            let hit = test
                .iter()
                .filter(|&&i| classify_linear(&head, rows[i]).is_ok_and(|s| s.predicted == labels[i]))
                .count();
            accs.push(hit as f64 / test.len() as f64);
        }
        let mean = if accs.is_empty() { 0.0 } else { accs.iter().sum::<f64>() / accs.len() as f64 };
        cv.push((lambda, mean));
    }
    let best = cv
        .iter()
        .fold(cv[0], |a, &b| if b.1 > a.1 { b } else { a });
    let mut head = fit(&rows, labels, k, best.0, cfg);
    head.cv_accuracy = cv;
    Ok(head)
}
