//! The two min-max normalization schemes: dataset-wide extrema, or per-sample
//! per-variable extrema carried along as pseudo-static data.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::schema::SampleWindow;

/// Value assigned to every active step of a constant variable.
pub const DEGENERATE_VALUE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    Global,
    PerVariable,
}

/// A (min, max) pair for one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
}

impl Extrema {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max < min {
            return Err(VfgError::data(format!("invalid extrema ({min}, {max})")));
        }
        Ok(Self { min, max })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    /// Extrema of a non-empty stream of finite values.
    pub fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (lo <= hi).then_some(Self { min: lo, max: hi })
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            DEGENERATE_VALUE
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn unscale(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + x * (self.max - self.min)
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self { min: self.min.min(other.min), max: self.max.max(other.max) }
    }
}

/// The extrema used to normalize one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mode: NormMode,
    /// One pair per dynamic variable.
    pub extrema: Vec<Extrema>,
}

impl NormalizationSpec {
    /// Indices of variables whose pair is degenerate.
    pub fn degenerate(&self) -> Vec<usize> {
        self.extrema.iter().enumerate().filter(|(_, e)| e.is_degenerate()).map(|(i, _)| i).collect()
    }
}

/// Per-variable extrema over the active steps of every sample.
pub fn fit_global(samples: &[SampleWindow]) -> Result<Vec<Extrema>> {
    let n_vars = samples
        .first()
        .map(SampleWindow::n_vars)
        .ok_or_else(|| VfgError::data("cannot fit normalization on an empty corpus"))?;
    (0..n_vars)
        .map(|v| {
            Extrema::of(samples.iter().flat_map(|s| s.series(v)))
                .ok_or_else(|| VfgError::data("no active steps in corpus"))
        })
        .collect()
}

fn check_finite(sample: &SampleWindow) -> Result<()> {
    if sample.active().iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(VfgError::data(format!("sample {}: non-finite dynamic value", sample.id)))
    }
}

fn apply(sample: &SampleWindow, extrema: &[Extrema], f: impl Fn(&Extrema, f64) -> f64) -> SampleWindow {
    let mut out = sample.clone();
    let length = out.length;
    for row in &mut out.dynamic[..length] {
        for (x, e) in row.iter_mut().zip(extrema) {
            *x = f(e, *x);
        }
    }
    out
}

/// Normalizes with dataset-wide extrema (one pair per variable).
pub fn normalize_global(sample: &SampleWindow, extrema: &[Extrema]) -> Result<(SampleWindow, NormalizationSpec)> {
    check_finite(sample)?;
    if extrema.len() != sample.n_vars() {
        return Err(VfgError::data(format!(
            "normalization has {} variables, sample {} has {}",
            extrema.len(),
            sample.id,
            sample.n_vars()
        )));
    }
    let out = apply(sample, extrema, Extrema::scale);
    Ok((out, NormalizationSpec { mode: NormMode::Global, extrema: extrema.to_vec() }))
}

/// Normalizes each variable by its own extrema over the active steps and
/// attaches those pairs to the sample as pseudo-static data.
pub fn normalize_per_variable(sample: &SampleWindow) -> Result<(SampleWindow, NormalizationSpec)> {
    check_finite(sample)?;
    let extrema: Vec<Extrema> =
        (0..sample.n_vars()).map(|v| Extrema::of(sample.series(v)).expect("length >= 1")).collect();
    let mut out = apply(sample, &extrema, Extrema::scale);
    out.pseudo_static = Some(extrema.iter().map(|e| (e.min, e.max)).collect());
    Ok((out, NormalizationSpec { mode: NormMode::PerVariable, extrema }))
}

/// Inverts either normalization; per-variable samples lose their pseudo-statics.
pub fn denormalize(sample: &SampleWindow, spec: &NormalizationSpec) -> SampleWindow {
    let mut out = apply(sample, &spec.extrema, Extrema::unscale);
    if spec.mode == NormMode::PerVariable {
        out.pseudo_static = None;
    }
    out
}

/// Inverts per-variable normalization using the sample's own pseudo-statics.
pub fn denormalize_pseudo(sample: &SampleWindow) -> Result<SampleWindow> {
    let pairs = sample
        .pseudo_static
        .as_ref()
        .ok_or_else(|| VfgError::data(format!("sample {} has no pseudo-static data", sample.id)))?;
    let extrema = pairs.iter().map(|&(lo, hi)| Extrema::new(lo, hi)).collect::<Result<Vec<_>>>()?;
    Ok(denormalize(sample, &NormalizationSpec { mode: NormMode::PerVariable, extrema }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::T_MAX;

    fn sample(rows: Vec<Vec<f64>>) -> SampleWindow {
        SampleWindow::from_active("s", "s", vec![0, 0, 0, 0], rows, T_MAX).unwrap()
    }

    #[test]
    fn per_variable_example_series() {
        let s = sample([10.0, 20.0, 30.0, 40.0, 50.0, 60.0].iter().map(|&v| vec![v]).collect());
        let (n, spec) = normalize_per_variable(&s).unwrap();
        let got: Vec<f64> = n.series(0).collect();
        for (g, e) in got.iter().zip([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]) {
            assert!((g - e).abs() < 1e-12);
        }
        assert_eq!(n.pseudo_static, Some(vec![(10.0, 60.0)]));
        assert!(n.dynamic[6..].iter().flatten().all(|&v| v == 0.0));
        assert!(spec.degenerate().is_empty());
    }

    #[test]
    fn global_endpoints() {
        let s = sample(vec![vec![2.0, 5.0], vec![4.0, 5.0]]);
        let ext = fit_global(std::slice::from_ref(&s)).unwrap();
        let (n, spec) = normalize_global(&s, &ext).unwrap();
        assert_eq!(n.dynamic[0][0], 0.0);
        assert_eq!(n.dynamic[1][0], 1.0);
        assert_eq!(n.dynamic[0][1], DEGENERATE_VALUE);
        assert_eq!(spec.degenerate(), vec![1]);
        assert_eq!(denormalize(&n, &spec), s);
    }

    #[test]
    fn degenerate_round_trip_is_exact() {
        let s = sample(vec![vec![7.25]; 4]);
        let (n, _) = normalize_per_variable(&s).unwrap();
        assert!(n.series(0).all(|v| v == 0.5));
        assert_eq!(denormalize_pseudo(&n).unwrap(), s);
    }

    #[test]
    fn extrema_reject_inverted_pairs() {
        assert!(Extrema::new(2.0, 1.0).is_err());
        assert!(Extrema::new(1.0, 1.0).unwrap().is_degenerate());
    }
}
