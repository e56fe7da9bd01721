//! `eval-cls`, `eval-joint` and `eval-e2e`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ecn::eval::{e2e_eval, joint_eval, mcnemar, read_records, ConfusionMatrix, JointEvalReport};
use ecn::inference::parse_predictions;
use ecn::sampler::ClassDictionary;
use ecn::Error;
use serde_json::json;

use crate::data::read_classes;
use crate::settings::{create_dir, io_error, write_file, write_json, write_manifest, Settings};
use crate::RunArgs;

#[derive(Args)]
pub struct EvalClsArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Predictions CSV written by `classify` or `linear-head`.
    #[arg(long)]
    predictions: PathBuf,
    /// Second predictions file over the same images for a McNemar test.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Class dictionary; built from the labels in the file when omitted.
    #[arg(long)]
    classes: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalJointArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Detected boxes with predicted scripts.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
}

#[derive(Args)]
pub struct EvalE2eArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Detected boxes with transcriptions and optional confidences.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Recognitions with a confidence below this are rejected.
    #[arg(long)]
    threshold: Option<f64>,
}

type Rows = Vec<(String, String, String)>;

fn read_predictions(path: &Path) -> Result<Rows> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(parse_predictions(&text, &path.display().to_string())?)
}

fn indices(rows: &Rows, classes: &ClassDictionary, path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let lookup = |l: &str| {
        classes
            .index_of(l)
            .ok_or_else(|| Error::Input(format!("{}: label '{l}' is not in the class dictionary", path.display())))
    };
    let mut truth = Vec::with_capacity(rows.len());
    let mut pred = Vec::with_capacity(rows.len());
    for (_, t, p) in rows {
        truth.push(lookup(t)?);
        pred.push(lookup(p)?);
    }
    Ok((truth, pred))
}

/// Per-row correctness of `other` reordered to match `rows` by source id.
fn aligned_correctness(rows: &Rows, other: &Rows, path: &Path) -> Result<Vec<bool>> {
    let mut by_id = HashMap::new();
    for (id, t, p) in other {
        if by_id.insert(id.as_str(), (t, p)).is_some() {
            return Err(Error::Input(format!("{}: duplicate source id '{id}'", path.display())).into());
        }
    }
    if by_id.len() != rows.len() {
        return Err(Error::Input(format!(
            "{} has {} rows, the primary predictions have {}",
            path.display(),
            by_id.len(),
            rows.len()
        ))
        .into());
    }
    rows.iter()
        .map(|(id, t, _)| match by_id.get(id.as_str()) {
            None => Err(Error::Input(format!("{}: no prediction for '{id}'", path.display())).into()),
            Some((t2, _)) if *t2 != t => {
                Err(Error::Input(format!("{}: '{id}' has label '{t2}', expected '{t}'", path.display())).into())
            }
            Some((_, p2)) => Ok(p2 == &t),
        })
        .collect()
}

pub fn eval_cls(a: EvalClsArgs) -> Result<()> {
    Settings::load(a.run.config.as_deref())?.finish()?;
    let rows = read_predictions(&a.predictions)?;
    let other = a.compare.as_deref().map(read_predictions).transpose()?;
    let classes = match read_classes(a.classes.as_deref())? {
        Some(c) => c,
        None => ClassDictionary::from_labels(
            rows.iter()
                .chain(other.iter().flatten())
                .flat_map(|(_, t, p)| [t.clone(), p.clone()]),
        ),
    };
    let (truth, pred) = indices(&rows, &classes, &a.predictions)?;
    let matrix = ConfusionMatrix::new(&pred, &truth, classes.len())?;
    let accuracy = matrix.accuracy();

    let comparison = match (&other, &a.compare) {
        (Some(o), Some(path)) => {
            let mine: Vec<bool> = truth.iter().zip(&pred).map(|(t, p)| t == p).collect();
            let theirs = aligned_correctness(&rows, o, path)?;
            let test = mcnemar(&mine, &theirs)?;
            let other_acc = theirs.iter().filter(|&&c| c).count() as f64 / theirs.len().max(1) as f64;
            Some(json!({ "file": path, "accuracy": other_acc, "mcnemar": test }))
        }
        _ => None,
    };

    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "eval-cls",
        json!({ "predictions": a.predictions, "compare": a.compare, "classes": classes.labels() }),
    )?;
    write_file(&out.join("confusion.csv"), matrix.to_csv(classes.labels()))?;
    write_json(
        &out.join("report.json"),
        &json!({ "classes": classes.labels(), "accuracy": accuracy, "comparison": comparison }),
    )?;
    println!("accuracy {:.4} over {} images", accuracy.overall, accuracy.total);
    if let Some(c) = &comparison {
        println!(
            "McNemar statistic {} p-value {}",
            c["mcnemar"]["statistic"], c["mcnemar"]["p_value"]
        );
    }
    Ok(())
}

fn counts_csv(r: &JointEvalReport) -> String {
    format!(
        "correct,wrong,missing,precision,recall,f_score\n{},{},{},{},{},{}\n",
        r.correct, r.wrong, r.missing, r.precision, r.recall, r.f_score
    )
}

fn print_counts(r: &JointEvalReport) {
    println!(
        "correct {} wrong {} missing {}: P={:.2} R={:.2} F={:.2}",
        r.correct, r.wrong, r.missing, r.precision, r.recall, r.f_score
    );
}

pub fn eval_joint(a: EvalJointArgs) -> Result<()> {
    Settings::load(a.run.config.as_deref())?.finish()?;
    let dets = read_records(&a.detections)?;
    let gt = read_records(&a.ground_truth)?;
    let report = joint_eval(&dets, &gt)?;
    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "eval-joint",
        json!({ "detections": a.detections, "ground_truth": a.ground_truth, "iou_threshold": ecn::eval::boxes::IOU_THRESHOLD }),
    )?;
    write_json(&out.join("report.json"), &report)?;
    write_file(&out.join("report.csv"), counts_csv(&report))?;
    print_counts(&report);
    Ok(())
}

pub fn eval_e2e(a: EvalE2eArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("threshold", a.threshold);
    let threshold: Option<f64> = s.take_opt("threshold")?;
    s.finish()?;
    let dets = read_records(&a.detections)?;
    let gt = read_records(&a.ground_truth)?;
    let report = e2e_eval(&dets, &gt, threshold)?;
    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "eval-e2e",
        json!({
            "detections": a.detections,
            "ground_truth": a.ground_truth,
            "threshold": threshold,
            "iou_threshold": ecn::eval::boxes::IOU_THRESHOLD,
            "max_edit_ratio": ecn::eval::text::MAX_EDIT_RATIO,
        }),
    )?;
    write_json(&out.join("report.json"), &report)?;
    write_file(&out.join("report.csv"), counts_csv(&report.counts))?;
    println!("{} recognitions rejected by the junk filter", report.rejected);
    print_counts(&report.counts);
    Ok(())
}
