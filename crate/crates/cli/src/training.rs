//! `train` and `finetune`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use ecn::net::{load_checkpoint, save_checkpoint, Checkpoint};
use ecn::sampler::{make_ensemble_dataset, PatchSet};
use ecn::train::{
    ecn_samples, finetune_ecn, patch_accuracy, patch_samples, select_warm_start, train_simple, EcnConfig, SgdConfig,
    TrainLog, TrainStepReport,
};
use ecn::{Error, PatchNet, Phase, Precision, Scalar};
use serde_json::json;

use crate::data::{check_classes, load_sets, precision_name, read_classes};
use crate::settings::{create_dir, io_error, write_json, write_manifest, write_file, Settings};
use crate::RunArgs;

const LOG_FILE: &str = "log.csv";
const VAL_FILE: &str = "val_history.csv";
const VAL_HEADER: &str = "iteration,patch_accuracy";

/// Optimizer overrides; unset flags fall back to the config file, then to defaults.
#[derive(Args, Clone)]
pub struct SgdArgs {
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lr_drop_factor: Option<f64>,
    #[arg(long)]
    lr_drop_every: Option<u64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    decay_biases: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_iterations: Option<u64>,
    /// Seed of the batch order and dropout masks.
    #[arg(long)]
    sgd_seed: Option<u64>,
}

impl SgdArgs {
    fn apply(&self, s: &mut Settings) {
        s.flag("base_lr", self.base_lr)
            .flag("lr_drop_factor", self.lr_drop_factor)
            .flag("lr_drop_every", self.lr_drop_every)
            .flag("momentum", self.momentum)
            .flag("weight_decay", self.weight_decay)
            .flag("decay_biases", self.decay_biases)
            .flag("batch_size", self.batch_size)
            .flag("max_iterations", self.max_iterations)
            .flag("seed", self.sgd_seed);
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Training index (`label<TAB>path` lines).
    #[arg(long)]
    train: PathBuf,
    /// Validation index for patch accuracy at each checkpoint.
    #[arg(long, conflicts_with = "holdout")]
    val: Option<PathBuf>,
    /// Hold out every H-th training image (index ≡ H−1 mod H) for patch validation.
    #[arg(long)]
    holdout: Option<usize>,
    /// Class dictionary; built from the training labels when omitted.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Network profile: paper or mini.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    init_seed: Option<u64>,
    /// single or double.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from a checkpoint written by an earlier run into the same directory.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    sgd: SgdArgs,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Simple-phase warm checkpoint, or an ECN-phase checkpoint to resume.
    #[arg(long)]
    warm: PathBuf,
    /// Attainable patch accuracy of the simple model; required for a simple-phase warm start.
    #[arg(long)]
    attainable: Option<f64>,
    /// Branches per ensemble sample.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    warm_fraction: Option<f64>,
    /// Seed of the ensemble sample draw.
    #[arg(long)]
    ensemble_seed: Option<u64>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    sgd: SgdArgs,
}

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:08}.ecn")
}

/// Keeps the header and the rows whose leading iteration is below `until`.
fn truncate_csv(path: &Path, until: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_error(path, e).into()),
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|v| v.parse::<u64>().ok())
                .is_some_and(|it| it < until);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, kept)
}

/// Clears logs of an earlier run, or trims them back to `resume_at`.
fn prepare_logs(out: &Path, resume_at: Option<u64>) -> Result<()> {
    // Log rows carry the 0-based step; validation rows the number of steps done.
    for (name, keep_through) in [(LOG_FILE, 0), (VAL_FILE, 1)] {
        let path = out.join(name);
        match resume_at {
            Some(it) => truncate_csv(&path, it + keep_through)?,
            None => match fs::remove_file(&path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_error(&path, e).into()),
                _ => {}
            },
        }
    }
    Ok(())
}

fn append_val(out: &Path, iteration: u64, acc: f64) -> ecn::Result<()> {
    let path = out.join(VAL_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_error(&path, e))?;
    let empty = f.metadata().map_err(|e| io_error(&path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(VAL_HEADER);
        text.push('\n');
    }
    text.push_str(&format!("{iteration},{acc}\n"));
    f.write_all(text.as_bytes()).map_err(|e| io_error(&path, e))?;
    Ok(())
}

fn read_val_history(out: &Path) -> Result<Vec<(u64, f64)>> {
    let path = out.join(VAL_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_error(&path, e).into()),
    };
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(n, l)| {
            let bad = || Error::Format {
                context: path.display().to_string(),
                message: format!("line {}: expected iteration,patch_accuracy", n + 1),
            };
            let (it, acc) = l.split_once(',').ok_or_else(bad)?;
            Ok((it.parse().map_err(|_| bad())?, acc.parse().map_err(|_| bad())?))
        })
        .collect()
}

struct Cadence<'o> {
    out: &'o Path,
    every: u64,
    until: u64,
}

impl Cadence<'_> {
    fn due(&self, done: u64) -> bool {
        done.is_multiple_of(self.every) || done == self.until
    }
}

fn train_typed<T: Scalar>(a: &TrainArgs, mut s: Settings) -> Result<()> {
    let profile: String = s.take("profile", "mini".to_string())?;
    let init_seed: u64 = s.take("init_seed", 0)?;
    let every: u64 = s.take("checkpoint_every", 1000)?;
    let holdout: Option<usize> = s.take_opt("holdout")?;
    let sgd = s.sgd(SgdConfig::default())?;
    s.finish()?;
    if every == 0 {
        return Err(Error::Config("checkpoint_every must be at least 1".into()).into());
    }
    if holdout.is_some_and(|h| h < 2) {
        return Err(Error::Config("holdout must be at least 2".into()).into());
    }
    if holdout.is_some() && a.val.is_some() {
        return Err(Error::Config("use either a validation index or a holdout, not both".into()).into());
    }

    let classes = read_classes(a.classes.as_deref())?;
    let data = load_sets::<T>(&a.train, classes.as_ref())?;
    let dict = data.classes;
    let (train_sets, val_sets): (Vec<PatchSet<T>>, Vec<PatchSet<T>>) = match (holdout, &a.val) {
        (Some(h), _) => {
            let (t, v): (Vec<_>, Vec<_>) = data.sets.into_iter().enumerate().partition(|(i, _)| i % h != h - 1);
            (t.into_iter().map(|x| x.1).collect(), v.into_iter().map(|x| x.1).collect())
        }
        (None, Some(v)) => (data.sets, load_sets::<T>(v, Some(&dict))?.sets),
        (None, None) => (data.sets, Vec::new()),
    };
    if train_sets.is_empty() {
        return Err(Error::Input("no training images left after the holdout".into()).into());
    }

    let (net, velocity) = match &a.resume {
        Some(path) => {
            let Checkpoint { net, velocity } = load_checkpoint::<T>(path)?;
            if net.phase != Phase::Simple {
                return Err(Error::Config(format!(
                    "{} is an ECN checkpoint; continue it with finetune",
                    path.display()
                ))
                .into());
            }
            check_classes(path, net.num_classes(), &dict)?;
            (net, velocity)
        }
        None => (PatchNet::<T>::build(&profile, dict.len(), init_seed)?, None),
    };
    let start = net.iteration;

    let out = a.run.out.as_path();
    create_dir(out)?;
    prepare_logs(out, a.resume.as_ref().map(|_| start))?;
    dict.write(&out.join("classes.tsv"))?;
    write_manifest(
        out,
        "train",
        json!({
            "train": a.train,
            "val": a.val,
            "holdout": holdout,
            "classes": dict.labels(),
            "profile": net.profile(),
            "num_classes": dict.len(),
            "init_seed": init_seed,
            "precision": precision_name(T::DTYPE),
            "checkpoint_every": every,
            "resume": a.resume,
            "start_iteration": start,
            "train_images": train_sets.len(),
            "val_images": val_sets.len(),
            "load_failures": data.failures,
            "sgd": sgd,
        }),
    )?;

    let samples = patch_samples(&train_sets);
    let mut log = TrainLog::open(&out.join(LOG_FILE))?;
    let cadence = Cadence {
        out,
        every,
        until: sgd.max_iterations,
    };
    let mut last: Option<TrainStepReport> = None;
    let mut last_val = None;
    let (mut net, velocity, _) = train_simple(net, velocity, &samples, &sgd, |r, tr| {
        log.append(r)?;
        let done = r.iteration + 1;
        if cadence.due(done) {
            log.flush()?;
            let mut snap = tr.net().clone();
            if !val_sets.is_empty() {
                let acc = patch_accuracy(&snap, &val_sets)?;
                snap.val_accuracy = Some(acc);
                last_val = Some(acc);
                append_val(cadence.out, done, acc)?;
            }
            save_checkpoint(&snap, Some(tr.velocity()), cadence.out.join(checkpoint_name(done)))?;
        }
        last = Some(r.clone());
        Ok(())
    })?;
    log.flush()?;
    if last.is_some() {
        net.val_accuracy = last_val.or(net.val_accuracy);
    }
    save_checkpoint(&net, Some(&velocity), out.join("final.ecn"))?;

    let history = read_val_history(out)?;
    if !history.is_empty() {
        let attainable = history.iter().map(|h| h.1).fold(0.0, f64::max);
        let fraction = EcnConfig::default().warm_fraction;
        let warm = select_warm_start(&history, attainable, fraction).map(|i| {
            json!({
                "iteration": history[i].0,
                "patch_accuracy": history[i].1,
                "checkpoint": checkpoint_name(history[i].0),
            })
        });
        write_json(
            &out.join("warm_start.json"),
            &json!({ "attainable": attainable, "warm_fraction": fraction, "warm": warm }),
        )?;
    }
    match last {
        Some(r) => println!(
            "trained to iteration {} (loss {:.4}{})",
            net.iteration,
            r.loss,
            last_val.map_or(String::new(), |v| format!(", patch validation accuracy {v:.4}"))
        ),
        None => println!("already at iteration {}; nothing to do", net.iteration),
    }
    Ok(())
}

fn finetune_typed<T: Scalar>(a: &FinetuneArgs, mut s: Settings) -> Result<()> {
    let every: u64 = s.take("checkpoint_every", 1000)?;
    let ensemble_seed: u64 = s.take("ensemble_seed", 0)?;
    let attainable: Option<f64> = s.take_opt("attainable")?;
    let ecn = s.ecn(EcnConfig::default())?;
    s.finish()?;
    if every == 0 {
        return Err(Error::Config("checkpoint_every must be at least 1".into()).into());
    }

    let warm = load_checkpoint::<T>(&a.warm)?;
    let classes = read_classes(a.classes.as_deref())?;
    let data = load_sets::<T>(&a.train, classes.as_ref())?;
    check_classes(&a.warm, warm.net.num_classes(), &data.classes)?;
    let resuming = warm.net.phase == Phase::Ecn;
    let attainable = match (resuming, attainable) {
        (_, Some(v)) => v,
        (true, None) => 1.0,
        (false, None) => {
            return Err(Error::Config(
                "a simple-phase warm checkpoint needs --attainable (the best patch validation accuracy)".into(),
            )
            .into())
        }
    };
    let ensemble = make_ensemble_dataset(&data.sets, ecn.n, ensemble_seed)?;
    let samples = ecn_samples(&data.sets, &ensemble);

    let out = a.run.out.as_path();
    create_dir(out)?;
    prepare_logs(out, resuming.then_some(warm.net.iteration))?;
    data.classes.write(&out.join("classes.tsv"))?;
    write_manifest(
        out,
        "finetune",
        json!({
            "train": a.train,
            "classes": data.classes.labels(),
            "warm": a.warm,
            "warm_phase": warm.net.phase,
            "warm_iteration": warm.net.iteration,
            "warm_patch_accuracy": warm.net.val_accuracy,
            "attainable": attainable,
            "ensemble_seed": ensemble_seed,
            "ensemble_samples": ensemble.samples.len(),
            "images_without_patches": ensemble.skipped,
            "precision": precision_name(T::DTYPE),
            "checkpoint_every": every,
            "load_failures": data.failures,
            "ecn": ecn,
        }),
    )?;

    let mut log = TrainLog::open(&out.join(LOG_FILE))?;
    let cadence = Cadence {
        out,
        every,
        until: ecn.sgd.max_iterations,
    };
    let mut last: Option<TrainStepReport> = None;
    let (net, velocity, _) = finetune_ecn(warm, &samples, &ecn, attainable, |r, tr| {
        log.append(r)?;
        let done = r.iteration + 1;
        if cadence.due(done) {
            log.flush()?;
            save_checkpoint(tr.net(), Some(tr.velocity()), cadence.out.join(checkpoint_name(done)))?;
        }
        last = Some(r.clone());
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(&net, Some(&velocity), out.join("final.ecn"))?;
    match last {
        Some(r) => println!("fine-tuned to iteration {} (loss {:.4})", net.iteration, r.loss),
        None => println!("already at iteration {}; nothing to do", net.iteration),
    }
    Ok(())
}

fn precision(s: &mut Settings) -> Result<Precision> {
    s.take("precision", Precision::Single)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("profile", a.profile.as_ref())
        .flag("init_seed", a.init_seed)
        .flag("precision", a.precision.as_ref())
        .flag("checkpoint_every", a.checkpoint_every)
        .flag("holdout", a.holdout);
    a.sgd.apply(&mut s);
    match precision(&mut s)? {
        Precision::Single => train_typed::<f32>(&a, s),
        Precision::Double => train_typed::<f64>(&a, s),
    }
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("attainable", a.attainable)
        .flag("n", a.n)
        .flag("warm_fraction", a.warm_fraction)
        .flag("ensemble_seed", a.ensemble_seed)
        .flag("precision", a.precision.as_ref())
        .flag("checkpoint_every", a.checkpoint_every);
    a.sgd.apply(&mut s);
    match precision(&mut s)? {
        Precision::Single => finetune_typed::<f32>(&a, s),
        Precision::Double => finetune_typed::<f64>(&a, s),
    }
}
