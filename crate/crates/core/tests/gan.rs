use std::time::{Duration, Instant};

use vfg::evaluate::fidelity_report;
use vfg::normalize::normalize_per_variable;
use vfg::schema::SampleWindow;
use vfg::synth::{toy_corpus, toy_schema, TOY_SINUSOID_SHARE};
use vfg::vargan::{train, GanArchitecture, GanModel, GanTrainConfig};

fn toy_config() -> GanTrainConfig {
    GanTrainConfig {
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
    }
}

fn normalized(corpus: &[SampleWindow]) -> Vec<SampleWindow> {
    corpus.iter().map(|s| normalize_per_variable(s).unwrap().0).collect()
}

#[test]
fn toy_gan_recovers_categories_lengths_and_amplitude_link() {
    let real = toy_corpus(1000, 1);
    let schema = toy_schema();
    let started = Instant::now();
    let (model, history) = train(&normalized(&real), &schema, &toy_config()).unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30 * 60), "training took {elapsed:?}");
    assert_eq!(history.len(), 200);

    let generated = model.generate(2000, 7).unwrap();
    let report = fidelity_report(&real, &generated, &schema, &[(0, 1)], &[(0, 1)]).unwrap();
    let share = report.category_share_generated[0][0];
    assert!((share - TOY_SINUSOID_SHARE).abs() <= 0.10, "sinusoid share {share}");
    let ks = report.length_ks.unwrap();
    assert!(ks < 0.15, "length KS {ks}");
    for entry in report.category_amplitude.iter().filter(|e| e.level == "sinusoid") {
        let (r, g) = (entry.real.unwrap(), entry.generated.unwrap());
        assert!(r > 0.0 && g > 0.0, "{}: real {r}, generated {g}", entry.variable);
    }
}

#[test]
fn ten_thousand_generated_samples_are_valid() {
    let schema = toy_schema();
    let cfg = GanTrainConfig { epochs: 2, ..toy_config() };
    let (model, _) = train(&normalized(&toy_corpus(200, 2)), &schema, &cfg).unwrap();
    let generated = model.generate(10_000, 11).unwrap();
    assert_eq!(generated.len(), 10_000);
    for s in &generated {
        s.validate(&schema).unwrap();
        assert!(s.generated && s.is_secondary);
        assert!((1..=schema.t_max).contains(&s.length));
        assert_eq!(s.flags.iter().sum::<f64>(), s.length as f64);
        assert!(s.dynamic[s.length..].iter().flatten().all(|&x| x == 0.0));
        assert!(s.time_gap_h.is_none() && s.dist_gap_mi.is_none());
        let pseudo = s.pseudo_static.as_ref().unwrap();
        for (v, &(lo, hi)) in pseudo.iter().enumerate() {
            assert!(lo <= hi);
            // Active values are denormalized into the emitted range.
            for row in s.active() {
                assert!(row[v] >= lo - 1e-9 && row[v] <= hi + 1e-9);
            }
        }
    }
}

#[test]
fn training_and_generation_are_deterministic() {
    let schema = toy_schema();
    let real = normalized(&toy_corpus(120, 5));
    let cfg = GanTrainConfig { epochs: 2, ..toy_config() };
    let (a, ha) = train(&real, &schema, &cfg).unwrap();
    let (b, hb) = train(&real, &schema, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.generate(50, 1).unwrap(), b.generate(50, 1).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.ckpt");
    a.save(&path).unwrap();
    let reloaded = GanModel::load(&path).unwrap();
    assert_eq!(reloaded.generate(50, 1).unwrap(), a.generate(50, 1).unwrap());
    assert_ne!(a.generate(50, 2).unwrap(), a.generate(50, 1).unwrap());
}
