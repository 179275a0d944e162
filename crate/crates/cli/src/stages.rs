//! The pipeline stages. Each stage reads its inputs from the configured
//! paths, writes its outputs into `out`, and returns a JSON summary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;
use vfg::evaluate::{evaluate_predictions, fidelity_report, FidelityReport, MetricsReport};
use vfg::identify::{label_secondaries, LabelKind};
use vfg::io;
use vfg::normalize::normalize_per_variable;
use vfg::predictor::{self, PredictorModel};
use vfg::schema::{SampleWindow, WindowSchema};
use vfg::seeds::derive_seed;
use vfg::split::{balance, counts, stratified_split, Ratio};
use vfg::vargan::{self, GanModel};
use vfg::window::{assemble_samples, ReadingIndex};
use vfg::VfgError;

use crate::artifacts::write_json;
use crate::config::{require, RunConfig};
use crate::error::CliResult;
use crate::report::{self, FidelitySummary, MetricsFile, NamedRun, FIDELITY, METRICS};

pub const LABELS: &str = "labels.csv";
pub const SAMPLES: &str = "samples.ndjson";
pub const TRAIN: &str = "train.ndjson";
pub const TEST: &str = "test.ndjson";
pub const GENERATED: &str = "generated.ndjson";
pub const GAN_MODEL: &str = "gan.ckpt";
pub const PREDICTOR_MODEL: &str = "predictor.ckpt";
pub const PREDICTIONS: &str = "predictions.csv";

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| VfgError::data(format!("cannot read {}: {e}", path.display())).into())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_samples(path: &Path) -> CliResult<(Vec<SampleWindow>, WindowSchema)> {
    io::read_samples_auto(BufReader::new(open(path)?))
        .map_err(|e| VfgError::data(format!("{}: {e}", path.display())).into())
}

fn write_samples(path: &Path, samples: &[SampleWindow], schema: &WindowSchema) -> CliResult<()> {
    Ok(io::write_samples(create(path)?, samples, schema)?)
}

fn write_history<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(VfgError::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Derived per-stage seeds: every stage draws from its own stream so
/// changing one section's seed leaves the others untouched.
pub struct Seeds;

impl Seeds {
    pub fn split(cfg: &RunConfig) -> u64 {
        derive_seed(cfg.seed, "split")
    }
    pub fn gan(cfg: &RunConfig) -> u64 {
        derive_seed(cfg.seed, &format!("gan/{}", cfg.gan.seed))
    }
    pub fn generate(cfg: &RunConfig) -> u64 {
        derive_seed(cfg.seed, "generate")
    }
    pub fn predictor(cfg: &RunConfig) -> u64 {
        derive_seed(cfg.seed, &format!("predictor/{}", cfg.predictor.seed))
    }
    pub fn world(cfg: &RunConfig) -> u64 {
        derive_seed(cfg.seed, &format!("world/{}", cfg.demo.world.seed))
    }
}

#[derive(Debug, Serialize)]
pub struct IdentifySummary {
    pub crashes: usize,
    pub ordinary: usize,
    pub primary: usize,
    pub secondary: usize,
    pub investigated: usize,
    pub diagnostics: Vec<String>,
    pub contours: Vec<String>,
}

pub fn identify(cfg: &RunConfig, out: &Path) -> CliResult<IdentifySummary> {
    let crashes = io::read_crashes(open(&require(&cfg.paths.crashes, "crashes")?)?)?;
    let readings = io::read_detectors(open(&require(&cfg.paths.detectors, "detectors")?)?)?;
    let index = ReadingIndex::new(&readings);
    let labeling = label_secondaries(&crashes, &index, &cfg.identification)?;
    io::write_labels(create(&out.join(LABELS))?, &labeling.labels)?;
    let mut contours = Vec::new();
    if cfg.output.contours {
        fs::create_dir_all(out.join("contours"))?;
        for inv in &labeling.investigations {
            let name =
                format!("contours/{}.svg", inv.crash_id.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-', "_"));
            fs::write(out.join(&name), report::contour_svg(inv))?;
            contours.push(name);
        }
    }
    let summary = IdentifySummary {
        crashes: crashes.len(),
        ordinary: labeling.count(LabelKind::Ordinary),
        primary: labeling.count(LabelKind::Primary),
        secondary: labeling.count(LabelKind::Secondary),
        investigated: labeling.investigations.len(),
        diagnostics: labeling.diagnostics,
        contours,
    };
    write_json(&out.join("identify.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassCounts {
    pub secondary: usize,
    pub other: usize,
}

impl ClassCounts {
    pub fn of(samples: &[SampleWindow]) -> Self {
        let (secondary, other) = counts(samples);
        Self { secondary, other }
    }
}

#[derive(Debug, Serialize)]
pub struct RequiredGenerated {
    pub ratio: Ratio,
    pub required: usize,
}

#[derive(Debug, Serialize)]
pub struct PrepareSummary {
    pub samples: usize,
    pub rejected: Vec<String>,
    pub trimmed: bool,
    pub train: ClassCounts,
    pub test: ClassCounts,
    /// Generated secondaries each ratio needs on this training split.
    pub required: Vec<RequiredGenerated>,
    pub ratio: Option<Ratio>,
    pub generated_used: usize,
}

fn ratios_of_interest(cfg: &RunConfig) -> Vec<Ratio> {
    let mut ratios = cfg.demo.ratios.clone();
    ratios.extend(cfg.prepare.ratio);
    ratios.sort_by(|a, b| (a.other * b.secondary).cmp(&(b.other * a.secondary)).reverse());
    ratios.dedup();
    ratios
}

pub fn prepare(cfg: &RunConfig, out: &Path) -> CliResult<PrepareSummary> {
    let crashes = io::read_crashes(open(&require(&cfg.paths.crashes, "crashes")?)?)?;
    let readings = io::read_detectors(open(&require(&cfg.paths.detectors, "detectors")?)?)?;
    let labels = io::read_labels(open(&require(&cfg.paths.labels, "labels")?)?)?;
    let generated = match (&cfg.prepare.ratio, &cfg.paths.generated) {
        (Some(_), Some(path)) => Some(read_samples(path)?.0),
        (Some(_), None) => return Err(crate::error::CliError::config("prepare.ratio needs --generated samples")),
        (None, _) => None,
    };
    let index = ReadingIndex::new(&readings);
    let assembly = assemble_samples(&crashes, &labels, &index, cfg.prepare.trimmed)?;
    let schema = WindowSchema::crash();
    let (train, test) = stratified_split(&assembly.samples, cfg.prepare.test_fraction, Seeds::split(cfg))?;
    let (pos, neg) = counts(&train);
    let required = ratios_of_interest(cfg)
        .into_iter()
        .map(|ratio| RequiredGenerated { ratio, required: ratio.required(pos, neg) })
        .collect();
    let real_train = train.len();
    let train = match (cfg.prepare.ratio, &generated) {
        (Some(r), Some(g)) => balance(&train, r, g)?,
        _ => train,
    };
    write_samples(&out.join(SAMPLES), &assembly.samples, &schema)?;
    write_samples(&out.join(TRAIN), &train, &schema)?;
    write_samples(&out.join(TEST), &test, &schema)?;
    let summary = PrepareSummary {
        samples: assembly.samples.len(),
        rejected: assembly.rejected,
        trimmed: cfg.prepare.trimmed,
        train: ClassCounts::of(&train),
        test: ClassCounts::of(&test),
        required,
        ratio: cfg.prepare.ratio,
        generated_used: train.len() - real_train,
    };
    write_json(&out.join("split.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct GanSummary {
    pub positives: usize,
    pub t_max: usize,
    pub epochs: usize,
    pub last: Option<vargan::EpochStats>,
}

pub fn train_gan(cfg: &RunConfig, out: &Path) -> CliResult<GanSummary> {
    let (train, schema) = read_samples(&require(&cfg.paths.train, "train")?)?;
    let positives = train
        .iter()
        .filter(|s| s.is_secondary && !s.generated)
        .map(|s| normalize_per_variable(s).map(|(n, _)| n))
        .collect::<vfg::Result<Vec<_>>>()?;
    let mut gan_cfg = cfg.gan.clone();
    gan_cfg.seed = Seeds::gan(cfg);
    if gan_cfg.checkpoint_every.is_some() && gan_cfg.checkpoint_dir.is_none() {
        gan_cfg.checkpoint_dir = Some(out.join("checkpoints"));
    }
    let (model, history) = vargan::train(&positives, &schema, &gan_cfg)?;
    model.save(out.join(GAN_MODEL))?;
    write_history(&out.join("gan_history.csv"), &history)?;
    Ok(GanSummary {
        positives: positives.len(),
        t_max: schema.t_max,
        epochs: history.len(),
        last: history.last().cloned(),
    })
}

#[derive(Debug, Serialize)]
pub struct GenerateSummary {
    pub count: usize,
    pub mean_length: f64,
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CliResult<GenerateSummary> {
    let model = GanModel::load(require(&cfg.paths.gan_model, "gan-model")?)?;
    let samples = model.generate(cfg.generate.count, Seeds::generate(cfg))?;
    write_samples(&out.join(GENERATED), &samples, &model.schema)?;
    let mean_length = samples.iter().map(|s| s.length as f64).sum::<f64>() / samples.len().max(1) as f64;
    Ok(GenerateSummary { count: samples.len(), mean_length })
}

#[derive(Debug, Serialize)]
pub struct PredictorSummary {
    pub train: ClassCounts,
    pub epochs: usize,
    pub last: Option<predictor::PredictorEpoch>,
    pub warnings: Vec<String>,
}

fn fit_predictor(
    cfg: &RunConfig,
    train: &[SampleWindow],
    schema: &WindowSchema,
    out: &Path,
) -> CliResult<(PredictorModel, PredictorSummary)> {
    let mut p_cfg = cfg.predictor.clone();
    p_cfg.seed = Seeds::predictor(cfg);
    let outcome = predictor::train(train, schema, &p_cfg)?;
    outcome.model.save(out.join(PREDICTOR_MODEL))?;
    write_history(&out.join("predictor_history.csv"), &outcome.history)?;
    let summary = PredictorSummary {
        train: ClassCounts::of(train),
        epochs: outcome.history.len(),
        last: outcome.history.last().cloned(),
        warnings: outcome.warnings,
    };
    Ok((outcome.model, summary))
}

pub fn train_predictor(cfg: &RunConfig, out: &Path) -> CliResult<PredictorSummary> {
    let (train, schema) = read_samples(&require(&cfg.paths.train, "train")?)?;
    Ok(fit_predictor(cfg, &train, &schema, out)?.1)
}

#[derive(Debug, Serialize)]
pub struct PredictSummary {
    pub samples: usize,
    pub predicted_secondary: usize,
    pub threshold: f64,
}

pub fn predict(cfg: &RunConfig, out: &Path) -> CliResult<PredictSummary> {
    let model = PredictorModel::load(require(&cfg.paths.predictor_model, "predictor-model")?)?;
    let (test, _) = read_samples(&require(&cfg.paths.test, "test")?)?;
    let threshold = cfg.predictor.threshold;
    let predictions = predictor::predict(&test, &model, threshold)?;
    io::write_predictions(create(&out.join(PREDICTIONS))?, &predictions)?;
    Ok(PredictSummary {
        samples: test.len(),
        predicted_secondary: predictions.iter().filter(|p| p.label).count(),
        threshold,
    })
}

/// Fidelity of `generated` against the real, non-generated secondaries of
/// `train`.
fn fidelity(
    cfg: &RunConfig,
    train: &[SampleWindow],
    generated: &[SampleWindow],
    schema: &WindowSchema,
) -> CliResult<FidelityReport> {
    let real: Vec<SampleWindow> = train.iter().filter(|s| s.is_secondary && !s.generated).cloned().collect();
    let (joint, pearson) = cfg.evaluation.resolve(schema)?;
    Ok(fidelity_report(&real, generated, schema, &joint, &pearson)?)
}

fn write_metrics(out: &Path, runs: Vec<NamedRun>, fidelity: Option<&FidelityReport>) -> CliResult<MetricsFile> {
    let file = MetricsFile { runs, fidelity: fidelity.map(FidelitySummary::of) };
    write_json(&out.join(METRICS), &file)?;
    if let Some(f) = fidelity {
        write_json(&out.join(FIDELITY), f)?;
    }
    Ok(file)
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> CliResult<MetricsFile> {
    let (test, _) = read_samples(&require(&cfg.paths.test, "test")?)?;
    let predictions = io::read_predictions(open(&require(&cfg.paths.predictions, "predictions")?)?)?;
    let metrics = evaluate_predictions(&test, &predictions, cfg.predictor.threshold, &cfg.evaluation.boxes)?;
    let run = NamedRun { name: "evaluation".into(), ratio: None, train_secondary: None, train_other: None, metrics };
    let fidelity = match (&cfg.paths.train, &cfg.paths.generated) {
        (Some(train), Some(generated)) => {
            let (train, schema) = read_samples(train)?;
            let (generated, _) = read_samples(generated)?;
            Some(fidelity(cfg, &train, &generated, &schema)?)
        }
        _ => None,
    };
    write_metrics(out, vec![run], fidelity.as_ref())
}

pub fn report(cfg: &RunConfig, out: &Path) -> CliResult<report::ReportSummary> {
    report::render(&require(&cfg.paths.run_dir, "run-dir")?, out)
}

#[derive(Debug, Serialize)]
pub struct DemoSummary {
    pub identify: IdentifySummary,
    pub prepare: PrepareSummary,
    pub gan: GanSummary,
    pub generate: GenerateSummary,
    pub runs: Vec<NamedRun>,
    pub report: report::ReportSummary,
}

/// Name of the run directory for a ratio, e.g. `1-4`.
fn ratio_dir(r: Ratio) -> String {
    format!("{}-{}", r.secondary, r.other)
}

fn run_one(
    cfg: &RunConfig,
    name: &str,
    ratio: Option<Ratio>,
    train: &[SampleWindow],
    test: &[SampleWindow],
    schema: &WindowSchema,
    dir: &Path,
) -> CliResult<NamedRun> {
    fs::create_dir_all(dir)?;
    let (model, _) = fit_predictor(cfg, train, schema, dir)?;
    let predictions = predictor::predict(test, &model, cfg.predictor.threshold)?;
    io::write_predictions(create(&dir.join(PREDICTIONS))?, &predictions)?;
    let metrics: MetricsReport =
        evaluate_predictions(test, &predictions, cfg.predictor.threshold, &cfg.evaluation.boxes)?;
    let (pos, neg) = counts(train);
    let run = NamedRun { name: name.to_owned(), ratio, train_secondary: Some(pos), train_other: Some(neg), metrics };
    write_json(&dir.join(METRICS), &MetricsFile { runs: vec![run.clone()], fidelity: None })?;
    Ok(run)
}

/// The whole pipeline on a synthetic world: data, identification,
/// preparation, GAN training and generation, then one predictor per
/// training ratio (plus the raw baseline), metrics and report.
pub fn demo(cfg: &RunConfig, out: &Path) -> CliResult<DemoSummary> {
    let mut world_cfg = cfg.demo.world.clone();
    world_cfg.seed = Seeds::world(cfg);
    let world = vfg::synth::world(&world_cfg)?;
    let data = out.join("data");
    fs::create_dir_all(&data)?;
    io::write_crashes(create(&data.join("crashes.csv"))?, &world.crashes)?;
    io::write_detectors(create(&data.join("detectors.csv"))?, &world.readings)?;
    drop(world);

    let dir = |name: &str| -> CliResult<PathBuf> {
        let d = out.join(name);
        fs::create_dir_all(&d)?;
        Ok(d)
    };
    let mut c = cfg.clone();
    c.paths.crashes = Some(data.join("crashes.csv"));
    c.paths.detectors = Some(data.join("detectors.csv"));
    let identify_summary = identify(&c, &dir("identify")?)?;
    c.paths.labels = Some(out.join("identify").join(LABELS));

    c.prepare.ratio = None;
    let prepare_summary = prepare(&c, &dir("prepare")?)?;
    c.paths.train = Some(out.join("prepare").join(TRAIN));
    c.paths.test = Some(out.join("prepare").join(TEST));

    let gan_summary = train_gan(&c, &dir("gan")?)?;
    c.paths.gan_model = Some(out.join("gan").join(GAN_MODEL));
    let needed = prepare_summary.required.iter().map(|r| r.required).max().unwrap_or(0);
    c.generate.count = c.generate.count.max(needed);
    let generate_summary = generate(&c, &dir("generate")?)?;

    let (train, schema) = read_samples(c.paths.train.as_ref().expect("set above"))?;
    let (test, _) = read_samples(c.paths.test.as_ref().expect("set above"))?;
    let (generated, _) = read_samples(&out.join("generate").join(GENERATED))?;
    let mut runs = vec![run_one(&c, "raw", None, &train, &test, &schema, &out.join("runs").join("raw"))?];
    for &r in &cfg.demo.ratios {
        let balanced = balance(&train, r, &generated)?;
        runs.push(run_one(
            &c,
            &r.to_string(),
            Some(r),
            &balanced,
            &test,
            &schema,
            &out.join("runs").join(ratio_dir(r)),
        )?);
    }
    let fid = fidelity(&c, &train, &generated, &schema)?;
    write_metrics(out, runs.clone(), Some(&fid))?;
    let report_summary = report::render(out, &dir("report")?)?;
    Ok(DemoSummary {
        identify: identify_summary,
        prepare: prepare_summary,
        gan: gan_summary,
        generate: generate_summary,
        runs,
        report: report_summary,
    })
}
