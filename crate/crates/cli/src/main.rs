//! `ecn`: synthesize data, train and fine-tune patch networks, classify line
//! images and score results.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 missing input,
//! 3 numeric failure.

mod data;
mod evaluate;
mod infer;
mod settings;
mod training;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ecn::gradcheck::{full_suite, GradCheckOptions, DEFAULT_STEP, DEFAULT_TOLERANCE};
use ecn::sampler::{synth_generate, SynthConfig};
use ecn::Error;
use serde_json::json;

use settings::{create_dir, write_json, write_manifest, Settings};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "ECN_THREADS";

#[derive(Parser)]
#[command(name = "ecn", version, about = "Patch-based script identification with ensembles of conjoined networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the deterministic synthetic benchmark.
    Synth(SynthArgs),
    /// Per-patch training of a patch network.
    Train(training::TrainArgs),
    /// ECN fine-tuning from a warm checkpoint.
    Finetune(training::FinetuneArgs),
    /// Whole-image classification of an index.
    Classify(infer::ClassifyArgs),
    /// Dump mean fc5 features per image.
    Features(infer::FeaturesArgs),
    /// Train a linear classifier on fc5 features and optionally score a test dump.
    LinearHead(infer::LinearHeadArgs),
    /// Accuracy, confusion matrix and McNemar test for prediction files.
    EvalCls(evaluate::EvalClsArgs),
    /// Joint detection and script identification scoring.
    EvalJoint(evaluate::EvalJointArgs),
    /// End-to-end recognition scoring with the junk filter.
    EvalE2e(evaluate::EvalE2eArgs),
    /// Finite-difference check of every layer, the mini network and an ensemble.
    Gradcheck(GradcheckArgs),
}

/// Output directory and optional `key = value` config file, shared by all commands.
#[derive(Args, Clone)]
pub struct RunArgs {
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    motifs_per_class: Option<usize>,
    #[arg(long)]
    shared_motifs: Option<usize>,
    #[arg(long)]
    min_width: Option<usize>,
    #[arg(long)]
    max_width: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Entries checked per parameter block; all when omitted.
    #[arg(long)]
    max_per_block: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("classes", a.classes)
        .flag("motifs_per_class", a.motifs_per_class)
        .flag("shared_motifs", a.shared_motifs)
        .flag("min_width", a.min_width)
        .flag("max_width", a.max_width)
        .flag("noise_sigma", a.noise_sigma)
        .flag("train_count", a.train_count)
        .flag("test_count", a.test_count)
        .flag("seed", a.seed);
    let keys = [
        "classes",
        "motifs_per_class",
        "shared_motifs",
        "min_width",
        "max_width",
        "noise_sigma",
        "train_count",
        "test_count",
        "seed",
    ];
    let cfg = s.apply_serde(SynthConfig::default(), &keys)?;
    s.finish()?;
    cfg.validate()?;
    create_dir(&a.run.out)?;
    let splits = synth_generate(&cfg, &a.run.out)?;
    println!(
        "wrote {} train and {} test images to {}",
        splits.train.len(),
        splits.test.len(),
        a.run.out.display()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut s = Settings::load(a.run.config.as_deref())?;
    s.flag("max_per_block", a.max_per_block)
        .flag("seed", a.seed)
        .flag("step", a.step)
        .flag("tolerance", a.tolerance);
    let opts = GradCheckOptions {
        max_per_block: s.take_opt("max_per_block")?,
        seed: s.take("seed", 0)?,
        step: s.take("step", DEFAULT_STEP)?,
        tolerance: s.take("tolerance", DEFAULT_TOLERANCE)?,
        ..GradCheckOptions::default()
    };
    s.finish()?;
    create_dir(&a.run.out)?;
    write_manifest(
        &a.run.out,
        "gradcheck",
        json!({
            "precision": "double",
            "max_per_block": opts.max_per_block,
            "seed": opts.seed,
            "step": opts.step,
            "tolerance": opts.tolerance,
            "floor": opts.floor,
        }),
    )?;
    let reports = full_suite(&opts)?;
    for r in &reports {
        println!(
            "{:<28} {} max rel error {:.3e} over {} entries",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.max_rel_error,
            r.checked
        );
    }
    write_json(&a.run.out.join("report.json"), &reports)?;
    if let Some(bad) = reports.iter().find(|r| !r.passed) {
        return Err(Error::Numeric {
            iteration: 0,
            layer: format!("{} ({})", bad.name, bad.worst_block),
            message: format!(
                "gradient check failed: relative error {:.3e} at index {} exceeds {:.1e}",
                bad.max_rel_error, bad.worst_index, bad.tolerance
            ),
        }
        .into());
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Missing(_)) => 2,
        Some(Error::Numeric { .. }) => 3,
        _ => 1,
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => training::train(a),
        Command::Finetune(a) => training::finetune(a),
        Command::Classify(a) => infer::classify(a),
        Command::Features(a) => infer::features(a),
        Command::LinearHead(a) => infer::linear_head(a),
        Command::EvalCls(a) => evaluate::eval_cls(a),
        Command::EvalJoint(a) => evaluate::eval_joint(a),
        Command::EvalE2e(a) => evaluate::eval_e2e(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
