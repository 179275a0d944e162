use grad::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfg::normalize::{normalize_per_variable, Extrema};
use vfg::predictor::{PredictorConfig, PredictorModel};
use vfg::schema::SampleWindow;
use vfg::synth::{toy_corpus, toy_schema};
use vfg::vargan::{pseudo_range, GanArchitecture, GanModel};

/// Adds large values to every padded step, bypassing the constructor.
fn poke_padding(s: &SampleWindow, rng: &mut impl Rng) -> SampleWindow {
    let mut out = s.clone();
    for row in &mut out.dynamic[s.length..] {
        for v in row {
            *v += rng.random_range(-1e3..1e3);
        }
    }
    out
}

#[test]
fn padded_steps_do_not_move_predictor_outputs() {
    let schema = toy_schema();
    let samples: Vec<SampleWindow> = toy_corpus(40, 3).into_iter().filter(|s| s.length < schema.t_max).collect();
    let config = PredictorConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        feed_forward: 16,
        hidden: 8,
        dropout: 0.0,
        ..PredictorConfig::default()
    };
    let mut model = PredictorModel::new(config, schema.clone(), vec![Extrema { min: 20.0, max: 80.0 }; 3], 1).unwrap();
    model.randomize_heads(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let poked: Vec<SampleWindow> = samples.iter().map(|s| poke_padding(s, &mut rng)).collect();
    let before = model.forward_batch(&samples.iter().collect::<Vec<_>>()).unwrap();
    let after = model.forward_batch(&poked.iter().collect::<Vec<_>>()).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert!((a.p_secondary - b.p_secondary).abs() < 1e-6);
        assert!((a.time_gap_h - b.time_gap_h).abs() < 1e-6);
        assert!((a.dist_gap_mi - b.dist_gap_mi).abs() < 1e-6);
    }
}

#[test]
fn padded_steps_reach_the_primary_discriminator_only_as_zeros() {
    let schema = toy_schema();
    let samples: Vec<SampleWindow> = toy_corpus(40, 5)
        .iter()
        .filter(|s| s.length < schema.t_max)
        .map(|s| normalize_per_variable(s).unwrap().0)
        .collect();
    let arch = GanArchitecture {
        noise_dim: 4,
        pass_noise_dim: 2,
        static_hidden: vec![8],
        lstm_hidden: 8,
        disc_hidden: vec![16],
        ..Default::default()
    };
    let model = GanModel::new(arch, schema, pseudo_range(&samples).unwrap(), 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let poked: Vec<SampleWindow> = samples.iter().map(|s| poke_padding(s, &mut rng)).collect();
    let score = |batch: &[SampleWindow]| {
        let b = model.real_batch(&batch.iter().collect::<Vec<_>>()).unwrap();
        let mut t = Tape::with_params(&model.store);
        let (c, p, d, f) = (t.input(b.cats), t.input(b.pseudo), t.input(b.dynamic.clone()), t.input(b.flags));
        let s = model.d2_forward(&mut t, c, p, d, f).unwrap();
        (t.value(s).clone(), b.dynamic)
    };
    let (before, dyn_before) = score(&samples);
    let (after, dyn_after) = score(&poked);
    assert_eq!(dyn_before, dyn_after, "padded steps must enter D2 as zeros");
    for (a, b) in before.data().iter().zip(after.data()) {
        assert!((a - b).abs() < 1e-6);
    }

    // Generator side: padded outputs are gated by the flags before D2.
    let noise = model.sample_noise(&mut rng, 16);
    let mut t = Tape::with_params(&model.store);
    let fake = model.generator_forward(&mut t, &noise, None).unwrap();
    let (flags, dynamic) = (t.value(fake.flags), t.value(fake.dynamic));
    let (steps, width) = (flags.dims2().unwrap().1, dynamic.dims2().unwrap().1);
    for (k, &x) in dynamic.data().iter().enumerate() {
        let (b, j) = (k / width, (k % width) / (width / steps));
        if flags.data()[b * steps + j] == 0.0 {
            assert_eq!(x, 0.0);
        }
    }
}
