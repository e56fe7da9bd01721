//! Box records, IoU and the joint detection + script protocol.
//!
//! Record files are UTF-8 with one box per line:
//! `image_id<TAB>x<TAB>y<TAB>w<TAB>h<TAB>script[<TAB>transcription[<TAB>confidence]]`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// IoU a detection must exceed to match a ground-truth box.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxRecord {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub script: String,
    pub transcription: Option<String>,
    pub confidence: Option<f64>,
}

impl BoxRecord {
    pub fn new(image_id: &str, x: f64, y: f64, w: f64, h: f64, script: &str) -> Self {
        BoxRecord {
            image_id: image_id.into(),
            x,
            y,
            w,
            h,
            script: script.into(),
            transcription: None,
            confidence: None,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &BoxRecord, b: &BoxRecord) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

pub fn parse_records(text: &str, context: &str) -> Result<Vec<BoxRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(context, format!("line {}: {m}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if !(6..=8).contains(&f.len()) {
            return Err(bad(format!("expected 6 to 8 tab-separated fields, got {}", f.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            f[i].trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("invalid {name} '{}'", f[i])))
        };
        let (x, y, w, h) = (num(1, "x")?, num(2, "y")?, num(3, "width")?, num(4, "height")?);
        if w <= 0.0 || h <= 0.0 {
            return Err(bad("box width and height must be positive".into()));
        }
        if f[0].is_empty() {
            return Err(bad("empty image id".into()));
        }
        let transcription = f.get(6).filter(|s| !s.is_empty()).map(|s| s.to_string());
        let confidence = match f.get(7) {
            Some(s) if !s.is_empty() => Some(num(7, "confidence")?),
            _ => None,
        };
        out.push(BoxRecord {
            image_id: f[0].to_string(),
            x,
            y,
            w,
            h,
            script: f[5].to_string(),
            transcription,
            confidence,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<BoxRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointEvalReport {
    pub correct: usize,
    pub wrong: usize,
    pub missing: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl JointEvalReport {
    pub fn from_counts(correct: usize, wrong: usize, missing: usize) -> Self {
        let ratio = |a: usize, b: usize| if a + b > 0 { a as f64 / (a + b) as f64 } else { 0.0 };
        let precision = ratio(correct, wrong);
        let recall = ratio(correct, missing);
        let f_score = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        JointEvalReport {
            correct,
            wrong,
            missing,
            precision,
            recall,
            f_score,
        }
    }
}

pub(crate) fn check_unique_ground_truth(gt: &[BoxRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for g in gt {
        let key = (g.image_id.as_str(), g.x.to_bits(), g.y.to_bits(), g.w.to_bits(), g.h.to_bits());
        if !seen.insert(key) {
            return Err(Error::input(format!(
                "duplicate ground-truth box in image {} at ({}, {}, {}, {})",
                g.image_id, g.x, g.y, g.w, g.h
            )));
        }
    }
    Ok(())
}

/// Greedy one-to-one matching per image in descending IoU order over pairs
/// with IoU above the threshold. Returns `(detection, ground truth)` index pairs.
pub(crate) fn greedy_match(dets: &[&BoxRecord], gt: &[&BoxRecord]) -> Vec<(usize, usize)> {
    let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_image.entry(&d.image_id).or_default().0.push(i);
    }
    for (j, g) in gt.iter().enumerate() {
        by_image.entry(&g.image_id).or_default().1.push(j);
    }
    let mut out = Vec::new();
    for (ds, gs) in by_image.values() {
        let mut pairs: Vec<(f64, usize, usize)> = ds
            .iter()
            .flat_map(|&i| gs.iter().map(move |&j| (i, j)))
            .map(|(i, j)| (iou(dets[i], gt[j]), i, j))
            .filter(|p| p.0 > IOU_THRESHOLD)
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut used_d, mut used_g) = (HashSet::new(), HashSet::new());
        for (_, i, j) in pairs {
            if !used_d.contains(&i) && !used_g.contains(&j) {
                used_d.insert(i);
                used_g.insert(j);
                out.push((i, j));
            }
        }
    }
    out.sort_unstable();
    out
}

/// A detection is correct when matched with IoU > 0.5 and its script agrees.
pub fn joint_eval(detections: &[BoxRecord], ground_truth: &[BoxRecord]) -> Result<JointEvalReport> {
    check_unique_ground_truth(ground_truth)?;
    let dets: Vec<&BoxRecord> = detections.iter().collect();
    let gt: Vec<&BoxRecord> = ground_truth.iter().collect();
    let correct = greedy_match(&dets, &gt)
        .into_iter()
        .filter(|&(i, j)| dets[i].script == gt[j].script)
        .count();
    Ok(JointEvalReport::from_counts(
        correct,
        detections.len() - correct,
        ground_truth.len() - correct,
    ))
}
