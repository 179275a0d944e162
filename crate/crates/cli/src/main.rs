mod artifacts;
mod config;
mod error;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vfg::split::Ratio;

use crate::artifacts::{update_manifest, write_json, Staging};
use crate::config::{require, RunConfig};
use crate::error::{CliError, CliResult};

/// Secondary-crash identification, variable-length GAN rebalancing and
/// secondary-crash prediction.
#[derive(Debug, Parser)]
#[command(name = "vfg", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, env = "VFG_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (config: seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread cap (config: threads).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (config: paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    crashes: Option<PathBuf>,
    #[arg(long, global = true)]
    detectors: Option<PathBuf>,
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[arg(long, global = true)]
    samples: Option<PathBuf>,
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    #[arg(long, global = true)]
    generated: Option<PathBuf>,
    #[arg(long, global = true)]
    gan_model: Option<PathBuf>,
    #[arg(long, global = true)]
    predictor_model: Option<PathBuf>,
    #[arg(long, global = true)]
    predictions: Option<PathBuf>,
    /// Directory of a finished run, read by `report`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label crashes ordinary, primary or secondary from detector contours.
    Identify {
        /// Write a deficit SVG per investigated primary (config: output.contours).
        #[arg(long)]
        contours: bool,
    },
    /// Build sample windows and the stratified train/test split.
    Prepare {
        /// Training ratio to rebalance to, e.g. 1:4 (config: prepare.ratio).
        #[arg(long)]
        ratio: Option<Ratio>,
        /// Keep only the pre-crash steps (config: prepare.trimmed).
        #[arg(long)]
        trimmed: bool,
        /// Test share (config: prepare.test_fraction).
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train the variable-length GAN on the training secondaries.
    TrainGan {
        /// Training epochs (config: gan.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample secondaries from a trained GAN.
    Generate {
        /// Number of samples (config: generate.count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the dual-head predictor.
    TrainPredictor {
        /// Training epochs (config: predictor.epochs).
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score test samples with a trained predictor.
    Predict {
        /// Decision threshold (config: predictor.threshold).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compute metrics (and fidelity, given --train and --generated).
    Evaluate {
        /// Decision threshold (config: predictor.threshold).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Render SVG/CSV panels from a run directory.
    Report,
    /// Run the full pipeline on a synthetic world.
    Demo,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Identify { .. } => "identify",
            Command::Prepare { .. } => "prepare",
            Command::TrainGan { .. } => "train-gan",
            Command::Generate { .. } => "generate",
            Command::TrainPredictor { .. } => "train-predictor",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Report => "report",
            Command::Demo => "demo",
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        match *self {
            Command::Identify { contours } => cfg.output.contours |= contours,
            Command::Prepare { ratio, trimmed, test_fraction } => {
                if ratio.is_some() {
                    cfg.prepare.ratio = ratio;
                }
                cfg.prepare.trimmed |= trimmed;
                if let Some(f) = test_fraction {
                    cfg.prepare.test_fraction = f;
                }
            }
            Command::TrainGan { epochs: Some(e) } => cfg.gan.epochs = e,
            Command::Generate { count: Some(c) } => cfg.generate.count = c,
            Command::TrainPredictor { epochs: Some(e) } => cfg.predictor.epochs = e,
            Command::Predict { threshold: Some(t) } | Command::Evaluate { threshold: Some(t) } => {
                cfg.predictor.threshold = t
            }
            _ => {}
        }
    }
}

fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.out_dir, &g.out),
        (&mut p.crashes, &g.crashes),
        (&mut p.detectors, &g.detectors),
        (&mut p.labels, &g.labels),
        (&mut p.samples, &g.samples),
        (&mut p.train, &g.train),
        (&mut p.test, &g.test),
        (&mut p.generated, &g.generated),
        (&mut p.gan_model, &g.gan_model),
        (&mut p.predictor_model, &g.predictor_model),
        (&mut p.predictions, &g.predictions),
        (&mut p.run_dir, &g.run_dir),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn to_value<T: Serialize>(v: T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(v).map_err(vfg::VfgError::from)?)
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &std::path::Path) -> CliResult<serde_json::Value> {
    match command {
        Command::Identify { .. } => to_value(stages::identify(cfg, out)?),
        Command::Prepare { .. } => to_value(stages::prepare(cfg, out)?),
        Command::TrainGan { .. } => to_value(stages::train_gan(cfg, out)?),
        Command::Generate { .. } => to_value(stages::generate(cfg, out)?),
        Command::TrainPredictor { .. } => to_value(stages::train_predictor(cfg, out)?),
        Command::Predict { .. } => to_value(stages::predict(cfg, out)?),
        Command::Evaluate { .. } => to_value(stages::evaluate(cfg, out)?),
        Command::Report => to_value(stages::report(cfg, out)?),
        Command::Demo => to_value(stages::demo(cfg, out)?),
    }
}

/// Runs one stage inside a staging directory; outputs appear in the output
/// directory only if the stage succeeds, otherwise they are quarantined.
fn run(cli: &Cli) -> CliResult<serde_json::Value> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let out = require(&cfg.paths.out_dir, "out")?;
    let stage = cli.command.stage();
    let started = Instant::now();
    let staging = Staging::new(&out, stage)?;
    let result = (|| {
        // The effective settings, minus machine-specific paths.
        let mut recorded = cfg.clone();
        recorded.paths = Default::default();
        recorded.threads = None;
        write_json(&staging.dir().join(format!("config.{stage}.json")), &recorded)?;
        dispatch(&cli.command, &cfg, staging.dir())
    })();
    match result {
        Ok(summary) => {
            staging.commit()?;
            update_manifest(&out, &cfg.hash(), cfg.seed, stage, started.elapsed().as_secs_f64())?;
            Ok(summary)
        }
        Err(e) => {
            if let Ok(dir) = staging.quarantine() {
                eprintln!("partial outputs moved to {}", dir.display());
            }
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
