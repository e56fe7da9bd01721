//! Whole-image classification from per-patch network outputs.

pub mod features;
pub mod linear;

pub use features::{decode_features, encode_features, extract_fc5, fc5_feature, read_features, write_features, Fc5Feature};
pub use linear::{classify_linear, train_linear_head, LinearHead, LinearHeadConfig};

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::PatchNet;
use crate::ops::{argmax, softmax};
use crate::sampler::PatchSet;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Probability,
    Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub values: Vec<f64>,
    pub kind: ScoreKind,
    /// Argmax of `values`, lowest index on ties.
    pub predicted: usize,
}

impl ClassScores {
    pub fn new(values: Vec<f64>, kind: ScoreKind) -> Self {
        let predicted = argmax(&values);
        ClassScores { values, kind, predicted }
    }
}

/// Aggregation rule for whole-image prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Mean of per-patch softmax outputs.
    AvgSoftmax,
    /// Unnormalized sum of per-patch fc7 outputs.
    Fc7Sum,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::AvgSoftmax => "avg-softmax",
            Rule::Fc7Sum => "fc7-sum",
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg-softmax" => Ok(Rule::AvgSoftmax),
            "fc7-sum" => Ok(Rule::Fc7Sum),
            _ => Err(Error::config(format!("unknown rule '{s}' (expected avg-softmax or fc7-sum)"))),
        }
    }
}

fn patch_logits<T: Scalar>(net: &PatchNet<T>, patches: &PatchSet<T>) -> Result<Vec<Vec<f64>>> {
    if patches.is_empty() {
        return Err(Error::input(format!("image {} has no patches", patches.source_id)));
    }
    patches
        .patches
        .iter()
        .map(|p| Ok(net.logits(p)?.data().iter().map(|v| v.widen()).collect()))
        .collect()
}

/// Mean of per-patch softmax distributions from a list of logit vectors.
pub fn avg_softmax(logits: &[Vec<f64>]) -> Result<ClassScores> {
    let first = logits.first().ok_or_else(|| Error::input("no patch outputs to aggregate"))?;
    let mut acc = vec![0.0; first.len()];
    for z in logits {
        acc.iter_mut().zip(softmax(z)).for_each(|(a, p)| *a += p);
    }
    let n = logits.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ClassScores::new(acc, ScoreKind::Probability))
}

/// Element-wise sum of per-patch fc7 vectors.
pub fn fc7_sum(logits: &[Vec<f64>]) -> Result<ClassScores> {
    let first = logits.first().ok_or_else(|| Error::input("no patch outputs to aggregate"))?;
    let mut acc = vec![0.0; first.len()];
    for z in logits {
        acc.iter_mut().zip(z).for_each(|(a, v)| *a += v);
    }
    Ok(ClassScores::new(acc, ScoreKind::Score))
}

pub fn classify_avg_softmax<T: Scalar>(net: &PatchNet<T>, patches: &PatchSet<T>) -> Result<ClassScores> {
    avg_softmax(&patch_logits(net, patches)?)
}

pub fn classify_fc7_sum<T: Scalar>(net: &PatchNet<T>, patches: &PatchSet<T>) -> Result<ClassScores> {
    fc7_sum(&patch_logits(net, patches)?)
}

pub fn classify<T: Scalar>(net: &PatchNet<T>, patches: &PatchSet<T>, rule: Rule) -> Result<ClassScores> {
    match rule {
        Rule::AvgSoftmax => classify_avg_softmax(net, patches),
        Rule::Fc7Sum => classify_fc7_sum(net, patches),
    }
}

/// Classifies every image in parallel, preserving input order.
pub fn classify_all<T: Scalar>(net: &PatchNet<T>, sets: &[PatchSet<T>], rule: Rule) -> Result<Vec<ClassScores>> {
    sets.par_iter().map(|s| classify(net, s, rule)).collect()
}

/// Both aggregation rules from a single pass over the patches.
pub fn classify_both<T: Scalar>(net: &PatchNet<T>, sets: &[PatchSet<T>]) -> Result<Vec<(ClassScores, ClassScores)>> {
    sets.par_iter()
        .map(|s| {
            let z = patch_logits(net, s)?;
            Ok((avg_softmax(&z)?, fc7_sum(&z)?))
        })
        .collect()
}

/// Share of images whose prediction equals the label.
pub fn accuracy(scores: &[ClassScores], sets: &[PatchSet<impl Sized>]) -> f64 {
    let hit = scores.iter().zip(sets).filter(|(s, p)| s.predicted == p.label).count();
    hit as f64 / scores.len().max(1) as f64
}

pub struct PredictionRow<'a> {
    pub source_id: &'a str,
    /// Ground-truth label.
    pub label: &'a str,
    pub predicted: &'a str,
    pub scores: &'a ClassScores,
}

/// `source_id,label,predicted_label,score_0..score_{K-1}`.
pub fn predictions_csv(rows: &[PredictionRow<'_>]) -> String {
    let k = rows.first().map_or(0, |r| r.scores.values.len());
    let mut out = String::from("source_id,label,predicted_label");
    for i in 0..k {
        let _ = write!(out, ",score_{i}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.source_id, r.label, r.predicted);
        for v in &r.scores.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `(source_id, label, predicted_label)` of every row of a predictions file.
pub fn parse_predictions(text: &str, context: &str) -> Result<Vec<(String, String, String)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("source_id,label,predicted_label") => {}
        _ => return Err(Error::format(context, "line 1: expected a predictions header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.splitn(4, ',').collect();
            if f.len() < 3 || f[..3].iter().any(|s| s.is_empty()) {
                return Err(Error::format(context, format!("line {}: expected source_id,label,predicted_label", n + 1)));
            }
            Ok((f[0].to_string(), f[1].to_string(), f[2].to_string()))
        })
        .collect()
}
