//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use grad::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfg::evaluate::{evaluate_predictions, fidelity_report, g_mean, regression_metrics, BoxSpec, MetricsReport};
use vfg::gradcheck::suite;
use vfg::identify::{label_secondaries, IdentificationConfig, LabelKind};
use vfg::normalize::{denormalize, fit_global, normalize_global, normalize_per_variable, Extrema};
use vfg::predictor::{predict, train as train_predictor, PredictorConfig, PredictorModel};
use vfg::schema::{activation_flags, SampleWindow};
use vfg::split::{balance, stratified_split, Ratio};
use vfg::synth::{
    risk_corpus, risk_oracle, risk_schema, toy_corpus, toy_schema, worked_example, world, RiskCorpusConfig, World,
    WorldConfig, TOY_SINUSOID_SHARE,
};
use vfg::vargan::{pseudo_range, train as train_gan, GanArchitecture, GanModel, GanTrainConfig};
use vfg::window::ReadingIndex;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_fidelity() -> Outcome {
    let started = Instant::now();
    let entries = suite(100, 1000);
    let elapsed = started.elapsed();
    let worst = entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("non-empty suite");
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed(1e-4)).map(|e| e.name.as_str()).collect();
    ensure(
        failed.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks x 100 cases, worst {:.2e} ({}), {:.1}s, failing {:?}",
            entries.len(),
            worst.max_rel_error,
            worst.name,
            elapsed.as_secs_f64(),
            failed
        ),
    )
}

fn metric_oracles() -> Outcome {
    let a = g_mean(Some(0.973), Some(0.968)).unwrap();
    let b = g_mean(Some(0.662), Some(0.953)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = regression_metrics(&t, &p).unwrap();
        let mae = t.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
        let rmse = (t.iter().zip(&p).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt();
        worst = worst.max((m.mae - mae).abs()).max((m.rmse - rmse).abs());
    }
    ensure(
        format!("{a:.3}") == "0.970" && format!("{b:.3}") == "0.794" && worst < 1e-9,
        format!("G-means {a:.3}, {b:.3}; worst MAE/RMSE deviation {worst:.1e}"),
    )
}

fn normalization_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<SampleWindow> = (0..1000)
        .map(|i| {
            let length = rng.random_range(1..=8);
            let rows =
                (0..length).map(|_| vec![rng.random_range(-50.0..50.0), rng.random_range(0.0..1e4), 3.5]).collect();
            SampleWindow::from_active(format!("s{i}"), format!("c{i}"), vec![0], rows, 8).unwrap()
        })
        .collect();
    let extrema = fit_global(&samples).unwrap();
    let mut worst: f64 = 0.0;
    let mut degenerate = 0;
    for s in &samples {
        let (g, gspec) = normalize_global(s, &extrema).unwrap();
        let (p, pspec) = normalize_per_variable(s).unwrap();
        degenerate += pspec.degenerate().len() + gspec.degenerate().len();
        for back in [denormalize(&g, &gspec), denormalize(&p, &pspec)] {
            for (ra, rb) in back.active().iter().zip(s.active()) {
                for (x, y) in ra.iter().zip(rb) {
                    worst = worst.max((x - y).abs() / (1.0 + y.abs()));
                }
            }
        }
    }
    ensure(
        worst < 1e-9 && degenerate > 0,
        format!("1000 samples, both modes, {degenerate} degenerate variables, worst error {worst:.1e}"),
    )
}

fn flag_matrix() -> Outcome {
    let rows: Vec<Vec<f64>> = [2, 4]
        .iter()
        .map(|&len| SampleWindow::from_active("s", "s", vec![0], vec![vec![1.0]; len], 4).unwrap().flags)
        .collect();
    let expected = vec![vec![1.0, 1.0, 0.0, 0.0], vec![1.0; 4]];
    ensure(rows == expected && activation_flags(2, 4) == expected[0], format!("{rows:?}"))
}

fn recovered(w: &World) -> Result<(), String> {
    let index = ReadingIndex::new(&w.readings);
    let labeling =
        label_secondaries(&w.crashes, &index, &IdentificationConfig::default()).map_err(|e| e.to_string())?;
    let planted: Vec<&str> = w.pairs.iter().map(|p| p.secondary_id.as_str()).collect();
    let found: Vec<&str> =
        labeling.labels.iter().filter(|l| l.label == LabelKind::Secondary).map(|l| l.crash_id.as_str()).collect();
    let missing = planted.iter().filter(|id| !found.contains(id)).count();
    let extra = found.iter().filter(|id| !planted.contains(id)).count();
    if missing + extra == 0 {
        Ok(())
    } else {
        Err(format!("seed {}: {missing} missed, {extra} false", w.config.seed))
    }
}

fn identification_recovery() -> Outcome {
    let mut planted = 0;
    for seed in 0..20 {
        let w = world(&WorldConfig { seed, ..WorldConfig::default() }).unwrap();
        planted += w.pairs.len();
        recovered(&w)?;
    }
    let w = worked_example();
    recovered(&w)?;
    let index = ReadingIndex::new(&w.readings);
    let labeling = label_secondaries(&w.crashes, &index, &IdentificationConfig::default()).unwrap();
    let s = labeling.get("WA-0417-2").ok_or("worked secondary missing")?;
    let (t, d) = (s.time_gap_h.unwrap() * 60.0, s.dist_gap_mi.unwrap());
    ensure(
        s.label == LabelKind::Secondary && (t - 25.0).abs() < 1e-9 && (d - 0.66).abs() < 1e-9,
        format!(
            "20 corpora, {planted} planted secondaries, none missed or false; worked pair gaps {t:.0} min / {d:.2} mi"
        ),
    )
}

fn gan_recovery() -> Outcome {
    let real = toy_corpus(1000, 1);
    let schema = toy_schema();
    let normalized: Vec<SampleWindow> = real.iter().map(|s| normalize_per_variable(s).unwrap().0).collect();
    let cfg = GanTrainConfig {
        architecture: GanArchitecture {
            noise_dim: 16,
            pass_noise_dim: 4,
            static_hidden: vec![32, 32],
            lstm_hidden: 32,
            disc_hidden: vec![64, 64],
            ..Default::default()
        },
        epochs: 200,
        seed: 3,
        ..Default::default()
    };
    let started = Instant::now();
    let (model, _) = train_gan(&normalized, &schema, &cfg).unwrap();
    let elapsed = started.elapsed();
    let generated = model.generate(2000, 7).unwrap();
    let report = fidelity_report(&real, &generated, &schema, &[], &[]).unwrap();
    let share = report.category_share_generated[0][0];
    let ks = report.length_ks.unwrap();
    let signs_ok = report
        .category_amplitude
        .iter()
        .filter(|e| e.level == "sinusoid")
        .all(|e| e.real.unwrap() > 0.0 && e.generated.unwrap() > 0.0);
    ensure(
        (share - TOY_SINUSOID_SHARE).abs() <= 0.10 && ks < 0.15 && signs_ok && elapsed < Duration::from_secs(1800),
        format!(
            "sinusoid share {share:.3} (truth {TOY_SINUSOID_SHARE}), length KS {ks:.3}, amplitude sign recovered {signs_ok}, trained in {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

struct Sweep {
    raw: MetricsReport,
    ratios: Vec<(&'static str, MetricsReport)>,
}

fn risk_sweep() -> Sweep {
    const SEED: u64 = 1;
    let cfg = RiskCorpusConfig { seed: SEED, hard_share: 0.45, ..Default::default() };
    let corpus = risk_corpus(&cfg).unwrap();
    let (train_set, test) = stratified_split(&corpus, 0.3, SEED).unwrap();
    let generated = risk_oracle(&cfg, 7000, SEED + 100).unwrap();
    let config = PredictorConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        feed_forward: 32,
        hidden: 16,
        epochs: 10,
        seed: SEED,
        ..Default::default()
    };
    let run = |set: &[SampleWindow]| {
        let model = train_predictor(set, &risk_schema(), &config).unwrap().model;
        evaluate_predictions(&test, &predict(&test, &model, 0.5).unwrap(), 0.5, &BoxSpec::STANDARD).unwrap()
    };
    let ratios = ["1:4", "1:2", "1:1"]
        .into_iter()
        .map(|r| (r, run(&balance(&train_set, r.parse::<Ratio>().unwrap(), &generated).unwrap())))
        .collect();
    Sweep { raw: run(&train_set), ratios }
}

fn imbalance_pattern(sweep: &Sweep) -> Outcome {
    let raw = sweep.raw.classification.sensitivity.unwrap();
    let balanced = sweep.ratios[2].1.classification;
    let (sens, g) = (balanced.sensitivity.unwrap(), balanced.g_mean.unwrap());
    ensure(
        raw <= 0.1 && sens >= 0.8 && g >= 0.8,
        format!("raw sensitivity {raw:.3}; 1:1 sensitivity {sens:.3}, G-mean {g:.3} (oracle generator)"),
    )
}

fn ratio_trend(sweep: &Sweep) -> Outcome {
    let g: Vec<f64> = sweep.ratios.iter().map(|(_, m)| m.classification.g_mean.unwrap()).collect();
    ensure(g[2] - g[0] >= 0.05, format!("G-mean 1:4 {:.3}, 1:2 {:.3}, 1:1 {:.3}", g[0], g[1], g[2]))
}

fn box_monotonicity(models: &[(String, Vec<Option<f64>>)]) -> Outcome {
    let mut evaluated = 0;
    for (name, acc) in models {
        match acc[..] {
            [Some(wide), Some(mid), Some(narrow)] => {
                evaluated += 1;
                if !(wide >= mid && mid >= narrow) {
                    return Err(format!("{name}: {acc:?}"));
                }
            }
            _ if acc.iter().all(Option::is_none) => {}
            _ => return Err(format!("{name}: partially undefined {acc:?}")),
        }
    }
    ensure(evaluated > 0, format!("{} models ({evaluated} with defined boxes) monotone", models.len()))
}

fn mask_invariance() -> Outcome {
    let schema = toy_schema();
    let raw: Vec<SampleWindow> = toy_corpus(60, 3).into_iter().filter(|s| s.length < schema.t_max).collect();
    let poke = |s: &SampleWindow| {
        let mut out = s.clone();
        for (j, row) in out.dynamic.iter_mut().enumerate().skip(s.length) {
            row.iter_mut().for_each(|v| *v += 1e3 * (j + 1) as f64);
        }
        out
    };
    let config = PredictorConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        feed_forward: 16,
        hidden: 8,
        dropout: 0.0,
        ..PredictorConfig::default()
    };
    let mut predictor =
        PredictorModel::new(config, schema.clone(), vec![Extrema { min: 20.0, max: 80.0 }; 3], 1).unwrap();
    predictor.randomize_heads(2);
    let poked: Vec<SampleWindow> = raw.iter().map(poke).collect();
    let a = predictor.forward_batch(&raw.iter().collect::<Vec<_>>()).unwrap();
    let b = predictor.forward_batch(&poked.iter().collect::<Vec<_>>()).unwrap();
    let p_change = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            (x.p_secondary - y.p_secondary)
                .abs()
                .max((x.time_gap_h - y.time_gap_h).abs())
                .max((x.dist_gap_mi - y.dist_gap_mi).abs())
        })
        .fold(0.0, f64::max);

    let normalized: Vec<SampleWindow> = raw.iter().map(|s| normalize_per_variable(s).unwrap().0).collect();
    let arch = GanArchitecture {
        noise_dim: 4,
        pass_noise_dim: 2,
        static_hidden: vec![8],
        lstm_hidden: 8,
        disc_hidden: vec![16],
        ..Default::default()
    };
    let gan = GanModel::new(arch, schema, pseudo_range(&normalized).unwrap(), 6).unwrap();
    let d2 = |set: &[SampleWindow]| {
        let batch = gan.real_batch(&set.iter().collect::<Vec<_>>()).unwrap();
        let mut t = Tape::with_params(&gan.store);
        let (c, p, d, f) = (t.input(batch.cats), t.input(batch.pseudo), t.input(batch.dynamic), t.input(batch.flags));
        let score = gan.d2_forward(&mut t, c, p, d, f).unwrap();
        t.value(score).data().to_vec()
    };
    let poked_norm: Vec<SampleWindow> = normalized.iter().map(poke).collect();
    let d_change = d2(&normalized).iter().zip(d2(&poked_norm)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(
        p_change < 1e-6 && d_change < 1e-6,
        format!(
            "{} samples with padding; max predictor change {p_change:.1e}, max D2 change {d_change:.1e}",
            raw.len()
        ),
    )
}

const QUICK: &str = r#"{
  "seed": 3,
  "gan": {"epochs": 5, "architecture": {"noise_dim": 8, "pass_noise_dim": 4, "static_hidden": [16], "lstm_hidden": 16, "disc_hidden": [32]}},
  "predictor": {"d_model": 16, "heads": 2, "layers": 1, "feed_forward": 32, "hidden": 16, "epochs": 2},
  "generate": {"count": 200},
  "demo": {"world": {"days": 14, "ordinary_crashes": 60, "planted_pairs": 8}}
}"#;

fn demo(config: &Path, out: &Path) -> Result<(), String> {
    let run = Command::new(env!("CARGO_BIN_EXE_vfg"))
        .args(["demo", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env_remove("VFG_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    if run.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&run.stderr).into_owned())
    }
}

/// Runs the demo twice; returns the determinism outcome and the box
/// accuracies of every demo model.
fn determinism() -> (Outcome, Vec<(String, Vec<Option<f64>>)>) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, QUICK).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = demo(&config, &a).and_then(|()| demo(&config, &b)) {
        return (Err(format!("demo failed: {e}")), Vec::new());
    }
    let same = |name: &str| fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap();
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(a.join("metrics.json")).unwrap()).unwrap();
    let boxes = metrics["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let acc = r["metrics"]["boxes"].as_array().unwrap().iter().map(|b| b["accuracy"].as_f64()).collect();
            (format!("demo {}", r["name"].as_str().unwrap()), acc)
        })
        .collect();
    let outcome = ensure(
        same("metrics.json") && same("manifest.json"),
        "two demo runs: metrics.json and manifest.json byte-identical".into(),
    );
    (outcome, boxes)
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() -> ExitCode {
    let sweep = catch_unwind(risk_sweep).ok();
    let (determinism_outcome, demo_boxes) = determinism();
    let mut models: Vec<(String, Vec<Option<f64>>)> = demo_boxes;
    if let Some(s) = &sweep {
        let acc = |m: &MetricsReport| m.boxes.iter().map(|b| b.accuracy).collect();
        models.push(("risk raw".into(), acc(&s.raw)));
        models.extend(s.ratios.iter().map(|(r, m)| (format!("risk {r}"), acc(m))));
    }
    let missing = || Err::<String, _>("risk sweep failed".to_string());
    let results: Vec<(&str, Outcome)> = vec![
        ("gradient fidelity", guarded(gradient_fidelity)),
        ("metric oracles", guarded(metric_oracles)),
        ("normalization round trip", guarded(normalization_round_trip)),
        ("activation flag matrix", guarded(flag_matrix)),
        ("identification recovery", guarded(identification_recovery)),
        ("GAN distribution recovery", guarded(gan_recovery)),
        ("imbalance pattern", sweep.as_ref().map_or_else(missing, imbalance_pattern)),
        ("ratio-sweep trend", sweep.as_ref().map_or_else(missing, ratio_trend)),
        ("box-accuracy monotonicity", guarded(|| box_monotonicity(&models))),
        ("mask invariance", guarded(mask_invariance)),
        ("determinism", determinism_outcome),
    ];
    let mut all = true;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                all = false;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} {name}: {detail}", i + 1);
    }
    println!("acceptance: {}", if all { "all criteria passed" } else { "FAILED" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
