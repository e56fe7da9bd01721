//! `classify`, `features` and `linear-head`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ecn::eval::{accuracy_by_width, width_bins_csv, ConfusionMatrix};
use ecn::inference::{
    classify_all, classify_linear, predictions_csv, read_features, train_linear_head, write_features, extract_fc5,
    ClassScores, LinearHeadConfig, PredictionRow, Rule,
};
use ecn::net::load;
use ecn::sampler::ClassDictionary;
use ecn::{Error, Precision, Scalar};
use serde_json::json;

use crate::data::{check_classes, load_sets, precision_name, read_classes};
use crate::settings::{create_dir, write_file, write_json, write_manifest, Settings};
use crate::RunArgs;

#[derive(Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index of images to classify (`label<TAB>path` lines).
    #[arg(long)]
    index: PathBuf,
    /// Class dictionary; defaults to `classes.tsv` beside the checkpoint.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// avg-softmax or fc7-sum.
    #[arg(long)]
    rule: Option<String>,
    /// Bin width in pixels of the accuracy-by-width table.
    #[arg(long)]
    width_bin: Option<usize>,
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Class dictionary; defaults to `classes.tsv` beside the checkpoint.
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
pub struct LinearHeadArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Feature dump written by `features`.
    #[arg(long)]
    train_features: PathBuf,
    /// Optional dump to classify with the trained head.
    #[arg(long)]
    test_features: Option<PathBuf>,
    /// Class dictionary; defaults to `classes.tsv` beside the training dump.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Comma-separated regularization strengths tried by cross-validation.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
}

/// The explicit dictionary, else `classes.tsv` beside `anchor`, else none.
fn dictionary(explicit: Option<&Path>, anchor: &Path) -> Result<Option<ClassDictionary>> {
    if explicit.is_some() {
        return read_classes(explicit);
    }
    let beside = anchor.parent().unwrap_or(Path::new(".")).join("classes.tsv");
    if beside.is_file() {
        return Ok(Some(ClassDictionary::read(&beside)?));
    }
    Ok(None)
}

fn label_name(classes: &ClassDictionary, i: usize) -> String {
    classes.label(i).map_or_else(|| i.to_string(), str::to_string)
}

fn write_predictions(out: &Path, ids: &[&str], truth: &[usize], scores: &[ClassScores], classes: &ClassDictionary) -> Result<()> {
    let names: Vec<(String, String)> = truth
        .iter()
        .zip(scores)
        .map(|(&t, s)| (label_name(classes, t), label_name(classes, s.predicted)))
        .collect();
    let rows: Vec<PredictionRow<'_>> = ids
        .iter()
        .zip(&names)
        .zip(scores)
        .map(|((id, (l, p)), s)| PredictionRow {
            source_id: id,
            label: l,
            predicted: p,
            scores: s,
        })
        .collect();
    write_file(&out.join("predictions.csv"), predictions_csv(&rows))
}

fn classify_typed<T: Scalar>(a: &ClassifyArgs, mut s: Settings) -> Result<()> {
    let rule: Rule = s.take("rule", Rule::AvgSoftmax)?;
    let bin: usize = s.take("width_bin", 100)?;
    s.finish()?;
    let net = load::<T>(&a.checkpoint)?;
    let explicit = dictionary(a.classes.as_deref(), &a.checkpoint)?;
    if let Some(c) = &explicit {
        check_classes(&a.checkpoint, net.num_classes(), c)?;
    }
    let data = load_sets::<T>(&a.index, explicit.as_ref())?;
    check_classes(&a.checkpoint, net.num_classes(), &data.classes)?;

    let scores = classify_all(&net, &data.sets, rule)?;
    let truth: Vec<usize> = data.sets.iter().map(|p| p.label).collect();
    let predicted: Vec<usize> = scores.iter().map(|s| s.predicted).collect();
    let correct: Vec<bool> = truth.iter().zip(&predicted).map(|(t, p)| t == p).collect();
    let widths: Vec<usize> = data.sets.iter().map(|p| p.width).collect();
    let ids: Vec<&str> = data.sets.iter().map(|p| p.source_id.as_str()).collect();
    let report = ConfusionMatrix::new(&predicted, &truth, data.classes.len())?.accuracy();

    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "classify",
        json!({
            "checkpoint": a.checkpoint,
            "index": a.index,
            "classes": data.classes.labels(),
            "rule": rule.name(),
            "width_bin": bin,
            "precision": precision_name(T::DTYPE),
            "checkpoint_iteration": net.iteration,
            "checkpoint_phase": net.phase,
            "load_failures": data.failures,
        }),
    )?;
    write_predictions(out, &ids, &truth, &scores, &data.classes)?;
    write_file(&out.join("accuracy_by_width.csv"), width_bins_csv(&accuracy_by_width(&widths, &correct, bin)?))?;
    write_json(&out.join("report.json"), &json!({ "rule": rule.name(), "accuracy": report }))?;
    println!("{} images, accuracy {:.4} ({})", truth.len(), report.overall, rule.name());
    Ok(())
}

fn features_typed<T: Scalar>(a: &FeaturesArgs) -> Result<()> {
    let net = load::<T>(&a.checkpoint)?;
    let explicit = dictionary(a.classes.as_deref(), &a.checkpoint)?;
    if let Some(c) = &explicit {
        check_classes(&a.checkpoint, net.num_classes(), c)?;
    }
    let data = load_sets::<T>(&a.index, explicit.as_ref())?;
    check_classes(&a.checkpoint, net.num_classes(), &data.classes)?;
    let feats = extract_fc5(&net, &data.sets)?;
    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "features",
        json!({
            "checkpoint": a.checkpoint,
            "index": a.index,
            "classes": data.classes.labels(),
            "precision": precision_name(T::DTYPE),
            "images": feats.len(),
            "dim": feats[0].values.len(),
            "load_failures": data.failures,
        }),
    )?;
    data.classes.write(&out.join("classes.tsv"))?;
    write_features(&out.join("features.bin"), &feats)?;
    println!("{} features of dimension {}", feats.len(), feats[0].values.len());
    Ok(())
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("rule", a.rule.as_ref())
        .flag("width_bin", a.width_bin)
        .flag("precision", a.precision.as_ref());
    match s.take("precision", Precision::Single)? {
        Precision::Single => classify_typed::<f32>(&a, s),
        Precision::Double => classify_typed::<f64>(&a, s),
    }
}

pub fn features(a: FeaturesArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("precision", a.precision.as_ref());
    let p = s.take("precision", Precision::Single)?;
    s.finish()?;
    match p {
        Precision::Single => features_typed::<f32>(&a),
        Precision::Double => features_typed::<f64>(&a),
    }
}

pub fn linear_head(a: LinearHeadArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    let lambdas = a.lambdas.as_ref().map(|l| format!("[{l}]"));
    s.flag("lambdas", lambdas)
        .flag("folds", a.folds)
        .flag("epochs", a.epochs)
        .flag("step", a.step);
    let cfg = s.apply_serde(LinearHeadConfig::default(), &["lambdas", "folds", "epochs", "step"])?;
    s.finish()?;

    let train = read_features(&a.train_features)?;
    let explicit = dictionary(a.classes.as_deref(), &a.train_features)?;
    let max_label = train.iter().map(|f| f.label).max().unwrap_or(0);
    let classes = match explicit {
        Some(c) if c.len() > max_label => c,
        Some(c) => {
            return Err(Error::Config(format!(
                "feature label {max_label} is out of range for a dictionary of {} classes",
                c.len()
            ))
            .into())
        }
        None => {
            let digits = max_label.to_string().len();
            ClassDictionary::from_labels((0..=max_label).map(|i| format!("{i:0digits$}")))
        }
    };
    let x: Vec<Vec<f64>> = train.iter().map(|f| f.values.clone()).collect();
    let y: Vec<usize> = train.iter().map(|f| f.label).collect();
    let head = train_linear_head(&x, &y, classes.len(), &cfg)?;

    let out = a.run.out.as_path();
    create_dir(out)?;
    write_manifest(
        out,
        "linear-head",
        json!({
            "train_features": a.train_features,
            "test_features": a.test_features,
            "classes": classes.labels(),
            "head": cfg,
            "chosen_lambda": head.lambda,
        }),
    )?;
    write_json(&out.join("head.json"), &head)?;
    println!("lambda {} chosen by cross-validation", head.lambda);
    if let Some(path) = &a.test_features {
        let test = read_features(path)?;
        let scores = test
            .iter()
            .map(|f| classify_linear(&head, &f.values))
            .collect::<ecn::Result<Vec<_>>>()?;
        let truth: Vec<usize> = test.iter().map(|f| f.label).collect();
        let predicted: Vec<usize> = scores.iter().map(|s| s.predicted).collect();
        let ids: Vec<&str> = test.iter().map(|f| f.source_id.as_str()).collect();
        let report = ConfusionMatrix::new(&predicted, &truth, classes.len())?.accuracy();
        write_predictions(out, &ids, &truth, &scores, &classes)?;
        write_json(&out.join("report.json"), &json!({ "accuracy": report }))?;
        println!("{} test images, accuracy {:.4}", truth.len(), report.overall);
    }
    Ok(())
}
