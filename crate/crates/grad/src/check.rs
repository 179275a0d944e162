//! Finite-difference gradient checking.

use crate::error::{GradError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter entries of
    /// `|analytic - numeric| / (|numeric| + 1e-8)`; infinite on failure.
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
    /// Set when a perturbed evaluation produced a non-finite value.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failure.is_none() && self.max_rel_error < tolerance
    }
}

/// Checks the gradient of the scalar built by `f` with respect to every
/// parameter in `store`, using central differences of width `2 * step`.
///
/// `f` gets a fresh tape with `store` already bound and must return the
/// scalar loss. It is called once for the analytic pass and twice per
/// parameter entry.
pub fn gradient_check<F>(store: &ParamStore, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    gradient_check_subset(store, &store.ids().collect::<Vec<_>>(), step, f)
}

/// Like [`gradient_check`] but only perturbs the listed parameters.
pub fn gradient_check_subset<F>(store: &ParamStore, ids: &[ParamId], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    gradient_check_with(store, ids, step, Stencil::Central, f)
}

/// Symmetric finite-difference stencil used for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`; truncation error `O(h²)`.
    Central,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`; truncation error
    /// `O(h⁴)`, which allows a wider step and so less rounding noise.
    FivePoint,
}

impl Stencil {
    /// `(offset in steps, weight)` pairs; the sum is divided by `step`.
    fn taps(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[(1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (2.0, -1.0 / 12.0), (-2.0, 1.0 / 12.0)],
        }
    }
}

/// Gradient check over `ids` with an explicit stencil.
pub fn gradient_check_with<F>(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    stencil: Stencil,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
        failure: None,
    };

    let mut tape = Tape::with_params(store);
    let loss = match f(&mut tape, store) {
        Ok(v) => v,
        Err(e @ GradError::NonFinite { .. }) => return Ok(failed(report, e)),
        Err(e) => return Err(e),
    };
    let grads = tape.backward(loss)?;

    let mut probe = store.clone();
    for &id in ids {
        let analytic = grads.param(id);
        let original = store.get(id).clone();
        for i in 0..original.len() {
            let x = original.data()[i];
            let mut numeric = 0.0;
            for &(offset, weight) in stencil.taps() {
                let mut shifted = original.clone();
                shifted.set_flat(i, x + offset * step);
                probe.set(id, shifted)?;
                match eval(&probe, &f) {
                    Ok(v) => numeric += weight * v,
                    Err(e) => return finish_err(report, e),
                }
            }
            numeric /= step;
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            report.entries += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_param = Some(store.name(id).to_string());
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        probe.set(id, original)?;
    }
    Ok(report)
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape, store)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(GradError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

fn failed(mut report: GradCheckReport, e: GradError) -> GradCheckReport {
    report.max_rel_error = f64::INFINITY;
    report.failure = Some(e.to_string());
    report
}

fn finish_err(report: GradCheckReport, e: GradError) -> Result<GradCheckReport> {
    match e {
        GradError::NonFinite { .. } => Ok(failed(report, e)),
        other => Err(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::DenseArray;

    #[test]
    fn quadratic_at_three() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseArray::scalar(3.0).unwrap());
        let mut tape = Tape::with_params(&store);
        let x = tape.param(w);
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.backward(y).unwrap().param(w).item(), 6.0);

        let report = gradient_check(&store, FD_STEP, |t, _| {
            let x = t.param(w);
            t.mul(x, x)
        })
        .unwrap();
        assert!((report.numeric - 6.0).abs() < 1e-8);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn overflow_reported_as_failure() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseArray::scalar(1e154).unwrap());
        let report = gradient_check(&store, FD_STEP, |t, _| {
            let x = t.param(w);
            let y = t.mul(x, x)?;
            t.mul(y, y)
        })
        .unwrap();
        assert!(report.failure.is_some());
        assert!(!report.passed(1e-4));
    }

    #[test]
    fn five_point_stencil_is_exact_on_cubics() {
        let mut store = ParamStore::new();
        let w = store.add("w", DenseArray::scalar(2.0).unwrap());
        let cube = |t: &mut Tape, _: &ParamStore| {
            let x = t.param(w);
            let y = t.mul(x, x)?;
            t.mul(y, x)
        };
        let wide = gradient_check_with(&store, &[w], 1e-2, Stencil::FivePoint, cube).unwrap();
        assert!((wide.numeric - 12.0).abs() < 1e-9, "{wide:?}");
        // The two-point stencil is off by step² at the same width.
        let central = gradient_check_with(&store, &[w], 1e-2, Stencil::Central, cube).unwrap();
        assert!((central.numeric - 12.0 - 1e-4).abs() < 1e-9, "{central:?}");
    }

    #[test]
    fn kink_margin_measures_distance_to_break_points() {
        let mut tape = Tape::new();
        assert_eq!(tape.kink_margin(), f64::INFINITY);
        let x = tape.input(DenseArray::new(vec![1, 3], vec![-0.5, 0.3, 2.0]).unwrap());
        tape.relu(x).unwrap();
        assert_eq!(tape.kink_margin(), 0.3);
        let p = tape.input(DenseArray::new(vec![1, 1], vec![0.9]).unwrap());
        tape.ln_clamped(p, 0.0, 0.95).unwrap();
        assert!((tape.kink_margin() - 0.05).abs() < 1e-12);
    }
}
