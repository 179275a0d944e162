use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfg::normalize::{
    denormalize, denormalize_pseudo, fit_global, normalize_global, normalize_per_variable, DEGENERATE_VALUE,
};
use vfg::schema::SampleWindow;

const T_MAX: usize = 8;
const VARS: usize = 4;
/// Variable 3 is the same constant everywhere.
const CONSTANT: f64 = 7.25;

fn corpus(n: usize, seed: u64) -> Vec<SampleWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            // Length-1 samples make every variable degenerate per sample.
            let length = rng.random_range(1..=T_MAX);
            let scale = 10f64.powi(rng.random_range(-3..4));
            let rows = (0..length)
                .map(|_| {
                    let mut row: Vec<f64> = (0..VARS - 1).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
                    row.push(CONSTANT);
                    row
                })
                .collect();
            SampleWindow::from_active(format!("s{i}"), format!("c{i}"), vec![0], rows, T_MAX).unwrap()
        })
        .collect()
}

fn assert_close(a: &SampleWindow, b: &SampleWindow) {
    assert_eq!(a.length, b.length);
    for (ra, rb) in a.dynamic.iter().zip(&b.dynamic) {
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{}: {x} vs {y}", a.id);
        }
    }
}

#[test]
fn per_variable_round_trip_on_a_thousand_samples() {
    let samples = corpus(1000, 1);
    assert!(samples.iter().any(|s| s.length == 1));
    for s in &samples {
        let (n, spec) = normalize_per_variable(s).unwrap();
        assert!(spec.degenerate().contains(&(VARS - 1)));
        for row in n.active() {
            assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_eq!(row[VARS - 1], DEGENERATE_VALUE);
        }
        assert_close(&denormalize(&n, &spec), s);
        assert_close(&denormalize_pseudo(&n).unwrap(), s);
        assert!(denormalize(&n, &spec).pseudo_static.is_none());
    }
}

#[test]
fn global_round_trip_on_a_thousand_samples() {
    let samples = corpus(1000, 2);
    let extrema = fit_global(&samples).unwrap();
    assert!(extrema[VARS - 1].is_degenerate());
    for s in &samples {
        let (n, spec) = normalize_global(s, &extrema).unwrap();
        assert!(n.active().iter().all(|row| row[VARS - 1] == DEGENERATE_VALUE));
        // Padding stays zero.
        assert!(n.dynamic[n.length..].iter().flatten().all(|&x| x == 0.0));
        assert_close(&denormalize(&n, &spec), s);
    }
}
