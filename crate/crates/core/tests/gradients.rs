use grad::Tape;
use vfg::gradcheck::{joint_fixture, suite};
use vfg::vargan::joint_loss;

const TOL: f64 = 1e-4;
const CASES: usize = 100;

#[test]
fn every_differentiable_block_matches_finite_differences() {
    let failed: Vec<String> = suite(CASES, 1000)
        .into_iter()
        .filter(|e| !e.passed(TOL))
        .map(|e| format!("{}: max rel error {:.2e} at seed {} {:?}", e.name, e.max_rel_error, e.worst_seed, e.failures))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn zero_alpha_cuts_the_auxiliary_discriminator_out() {
    for seed in 0..20 {
        let f = joint_fixture(seed).unwrap();
        let mut tape = Tape::with_params(&f.model.store);
        let (loss, _, d) = f.model.joint_objective(&mut tape, &f.real, &f.noise, 0.0).unwrap();
        let grads = tape.backward(loss.combined).unwrap();
        for id in f.model.d1_params() {
            assert!(grads.param(id).data().iter().all(|&g| g == 0.0), "seed {seed}");
        }
        assert!(f.model.d2_params().iter().any(|&id| grads.param(id).data().iter().any(|&g| g != 0.0)));
        // The same four scores with α = 0 reproduce L2 exactly.
        let again = joint_loss(&mut tape, d[0], d[1], d[2], d[3], 0.0).unwrap();
        assert_eq!(tape.value(again.combined).item(), tape.value(loss.l2).item());
    }
}
