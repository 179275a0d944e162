//! Rebalancing experiments on the 1:60 risk corpus. The synthetic positives
//! come from the corpus's own positive distribution (see
//! `synth::risk_oracle`), so the outcome measures the predictor's response
//! to the training ratio alone.

use vfg::evaluate::{evaluate_predictions, BoxSpec, MetricsReport};
use vfg::predictor::{predict, train, PredictorConfig};
use vfg::schema::SampleWindow;
use vfg::split::{balance, counts, stratified_split, Ratio};
use vfg::synth::{risk_corpus, risk_oracle, risk_schema, RiskCorpusConfig};

const SEED: u64 = 1;

fn run(train_set: &[SampleWindow], test: &[SampleWindow]) -> MetricsReport {
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
    let model = train(train_set, &risk_schema(), &config).unwrap().model;
    let preds = predict(test, &model, 0.5).unwrap();
    evaluate_predictions(test, &preds, 0.5, &BoxSpec::STANDARD).unwrap()
}

fn assert_boxes_monotone(name: &str, m: &MetricsReport) {
    let acc: Vec<Option<f64>> = m.boxes.iter().map(|b| b.accuracy).collect();
    if let [Some(wide), Some(mid), Some(narrow)] = acc[..] {
        assert!(wide >= mid && mid >= narrow, "{name}: {acc:?}");
    } else {
        assert!(acc.iter().all(Option::is_none), "{name}: {acc:?}");
    }
}

#[test]
fn rebalancing_lifts_sensitivity_and_g_mean() {
    let cfg = RiskCorpusConfig { seed: SEED, hard_share: 0.45, ..Default::default() };
    let corpus = risk_corpus(&cfg).unwrap();
    assert_eq!(cfg.negatives / cfg.positives, 60);
    let (train_set, test) = stratified_split(&corpus, 0.3, SEED).unwrap();
    let generated = risk_oracle(&cfg, 7000, SEED + 100).unwrap();

    let raw = run(&train_set, &test);
    assert!(raw.classification.sensitivity.unwrap() <= 0.1, "raw {:?}", raw.classification);
    assert_boxes_monotone("raw", &raw);

    let mut g = Vec::new();
    for ratio in ["1:4", "1:2", "1:1"] {
        let set = balance(&train_set, ratio.parse::<Ratio>().unwrap(), &generated).unwrap();
        let (pos, neg) = counts(&set);
        assert!(pos * ratio[2..].parse::<usize>().unwrap() >= neg, "{ratio}: {pos} vs {neg}");
        let m = run(&set, &test);
        assert_boxes_monotone(ratio, &m);
        g.push((ratio, m.classification));
    }
    let (_, balanced) = g[2];
    assert!(balanced.sensitivity.unwrap() >= 0.8 && balanced.g_mean.unwrap() >= 0.8, "1:1 {balanced:?}");
    let (g14, g11) = (g[0].1.g_mean.unwrap(), balanced.g_mean.unwrap());
    assert!(g11 - g14 >= 0.05, "G-mean 1:4 {g14} vs 1:1 {g11}");
}
