//! Classification, regression, joint box accuracy and generative-fidelity
//! metrics. Undefined quantities (empty classes, zero variance) are `None`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::predictor::Prediction;
use crate::schema::{SampleWindow, WindowSchema};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_labels(truth: &[bool], predicted: &[bool]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(VfgError::data(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub g_mean: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    ClassificationMetrics { sensitivity, specificity, g_mean: g_mean(sensitivity, specificity) }
}

pub fn g_mean(sensitivity: Option<f64>, specificity: Option<f64>) -> Option<f64> {
    Some((sensitivity? * specificity?).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
}

pub fn regression_metrics(truth: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(VfgError::data(format!(
            "regression metrics need equal non-empty vectors, got {} and {}",
            truth.len(),
            predicted.len()
        )));
    }
    let n = truth.len() as f64;
    let (abs, sq) = truth.iter().zip(predicted).fold((0.0, 0.0), |(a, s), (y, p)| {
        let e = y - p;
        (a + e.abs(), s + e * e)
    });
    Ok(RegressionMetrics { mae: abs / n, rmse: (sq / n).sqrt() })
}

/// Half-extents of the joint time × distance acceptance box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub time_h: f64,
    pub dist_mi: f64,
}

impl BoxSpec {
    pub const STANDARD: [BoxSpec; 3] = [
        BoxSpec { time_h: 1.0, dist_mi: 1.0 },
        BoxSpec { time_h: 0.5, dist_mi: 0.5 },
        BoxSpec { time_h: 0.2, dist_mi: 0.2 },
    ];

    pub fn new(time_h: f64, dist_mi: f64) -> Result<Self> {
        if !(time_h > 0.0 && dist_mi > 0.0) {
            return Err(VfgError::config(format!("box extents must be positive, got {time_h} × {dist_mi}")));
        }
        Ok(Self { time_h, dist_mi })
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.time_h, self.dist_mi)
    }
}

/// Fraction of (time, distance) errors with `|Δt| ≤ time_h` and
/// `|Δd| ≤ dist_mi`; `None` for no errors.
pub fn box_accuracy(errors: &[(f64, f64)], b: BoxSpec) -> Option<f64> {
    let inside = errors.iter().filter(|(t, d)| t.abs() <= b.time_h && d.abs() <= b.dist_mi).count();
    ratio(inside, errors.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxResult {
    #[serde(rename = "box")]
    pub spec: BoxSpec,
    pub accuracy: Option<f64>,
}

/// Everything scored for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub classification: ClassificationMetrics,
    /// Over correctly classified secondaries with gap labels.
    pub time_gap: Option<RegressionMetrics>,
    pub dist_gap: Option<RegressionMetrics>,
    pub boxes: Vec<BoxResult>,
}

/// Scores predictions against the labelled samples they were made for.
pub fn evaluate_predictions(
    samples: &[SampleWindow],
    predictions: &[Prediction],
    threshold: f64,
    boxes: &[BoxSpec],
) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut truth = Vec::with_capacity(samples.len());
    let mut predicted = Vec::with_capacity(samples.len());
    let mut gap_truth = (Vec::new(), Vec::new());
    let mut gap_pred = (Vec::new(), Vec::new());
    let mut errors = Vec::new();
    for s in samples {
        let p = by_id.get(s.id.as_str()).ok_or_else(|| VfgError::data(format!("no prediction for sample {}", s.id)))?;
        let label = p.p >= threshold;
        truth.push(s.is_secondary);
        predicted.push(label);
        if let (true, true, Some(t), Some(d)) = (s.is_secondary, label, s.time_gap_h, s.dist_gap_mi) {
            gap_truth.0.push(t);
            gap_truth.1.push(d);
            gap_pred.0.push(p.time_gap_h);
            gap_pred.1.push(p.dist_gap_mi);
            errors.push((p.time_gap_h - t, p.dist_gap_mi - d));
        }
    }
    let confusion = ConfusionCounts::from_labels(&truth, &predicted)?;
    let reg = |t: &[f64], p: &[f64]| (!t.is_empty()).then(|| regression_metrics(t, p)).transpose();
    Ok(MetricsReport {
        samples: samples.len(),
        threshold,
        confusion,
        classification: classification_metrics(&confusion),
        time_gap: reg(&gap_truth.0, &gap_pred.0)?,
        dist_gap: reg(&gap_truth.1, &gap_pred.1)?,
        boxes: boxes.iter().map(|&b| BoxResult { spec: b, accuracy: box_accuracy(&errors, b) }).collect(),
    })
}

// ----- fidelity -------------------------------------------------------------

pub const HISTOGRAM_BINS: usize = 50;
/// Steps (1-based) at which cross-sample correlations are compared.
pub const PEARSON_STEPS: usize = 6;

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Uniform bins over `[lo, hi]`; a degenerate range uses a single bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn pooled(a: &[f64], b: &[f64], bins: usize) -> Self {
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo < hi) {
            return Self {
                lo: if lo.is_finite() { lo } else { 0.0 },
                hi: if lo.is_finite() { lo } else { 0.0 },
                bins: 1,
            };
        }
        Self { lo, hi, bins }
    }

    pub fn width(&self) -> f64 {
        if self.bins == 1 {
            1.0
        } else {
            (self.hi - self.lo) / self.bins as f64
        }
    }

    pub fn index(&self, x: f64) -> usize {
        if self.bins == 1 {
            return 0;
        }
        (((x - self.lo) / (self.hi - self.lo) * self.bins as f64).floor() as usize).min(self.bins - 1)
    }

    /// Normalized histogram (sums to 1, or all zeros for no data).
    pub fn histogram(&self, xs: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins];
        for &x in xs {
            h[self.index(x)] += 1.0;
        }
        let n = xs.len().max(1) as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

/// Wasserstein-1 distance between two histograms on the same binning.
pub fn wasserstein_hist(p: &[f64], q: &[f64], width: f64) -> f64 {
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    total * width
}

/// Total-variation distance between two normalized histograms.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Kolmogorov–Smirnov statistic between two samples of integers.
pub fn ks_statistic(a: &[usize], b: &[usize]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let max = *a.iter().chain(b).max().expect("non-empty");
    let cdf = |xs: &[usize], k: usize| xs.iter().filter(|&&x| x <= k).count() as f64 / xs.len() as f64;
    Some((0..=max).map(|k| (cdf(a, k) - cdf(b, k)).abs()).fold(0.0, f64::max))
}

/// Per-sample mid-range `(max + min) / 2` of a variable over active steps.
pub fn mid_range(s: &SampleWindow, var: usize) -> f64 {
    let (lo, hi) = s.series(var).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    (lo + hi) / 2.0
}

/// Per-sample amplitude `max − min` of a variable over active steps.
pub fn amplitude(s: &SampleWindow, var: usize) -> f64 {
    let (lo, hi) = s.series(var).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    hi - lo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidRangeComparison {
    pub variable: String,
    pub binning: Binning,
    pub real: Vec<f64>,
    pub generated: Vec<f64>,
    pub wasserstein: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    pub variables: (String, String),
    pub x_binning: Binning,
    pub y_binning: Binning,
    /// Row-major `x bins × y bins`.
    pub real: Vec<f64>,
    pub generated: Vec<f64>,
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonComparison {
    pub variables: (String, String),
    /// Index `j` holds step `j + 1`.
    pub real: Vec<Option<f64>>,
    pub generated: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAmplitude {
    pub group: String,
    pub level: String,
    pub variable: String,
    pub real: Option<f64>,
    pub generated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub mid_range: Vec<MidRangeComparison>,
    pub joint: Vec<JointComparison>,
    pub pearson: Vec<PearsonComparison>,
    /// Correlation between each category indicator and each variable's
    /// amplitude.
    pub category_amplitude: Vec<CategoryAmplitude>,
    pub category_share_real: Vec<Vec<f64>>,
    pub category_share_generated: Vec<Vec<f64>>,
    pub length_ks: Option<f64>,
}

fn category_shares(samples: &[SampleWindow], schema: &WindowSchema) -> Vec<Vec<f64>> {
    schema
        .group_sizes()
        .iter()
        .enumerate()
        .map(|(g, &size)| {
            let mut counts = vec![0.0; size];
            for s in samples {
                counts[s.categories[g]] += 1.0;
            }
            counts.iter().map(|c| c / samples.len() as f64).collect()
        })
        .collect()
}

/// Compares a generated corpus with a real one on the same schema.
pub fn fidelity_report(
    real: &[SampleWindow],
    generated: &[SampleWindow],
    schema: &WindowSchema,
    joint_pairs: &[(usize, usize)],
    pearson_pairs: &[(usize, usize)],
) -> Result<FidelityReport> {
    if real.is_empty() || generated.is_empty() {
        return Err(VfgError::data("fidelity report needs non-empty real and generated corpora"));
    }
    for s in real.iter().chain(generated) {
        s.validate(schema)?;
    }
    let v = schema.n_vars();
    for &(a, b) in joint_pairs.iter().chain(pearson_pairs) {
        if a >= v || b >= v {
            return Err(VfgError::config(format!("variable pair ({a}, {b}) outside {v} variables")));
        }
    }
    let name = |i: usize| schema.variables[i].clone();
    let mid_range = (0..v)
        .map(|var| {
            let r: Vec<f64> = real.iter().map(|s| mid_range(s, var)).collect();
            let g: Vec<f64> = generated.iter().map(|s| mid_range(s, var)).collect();
            let binning = Binning::pooled(&r, &g, HISTOGRAM_BINS);
            let (hr, hg) = (binning.histogram(&r), binning.histogram(&g));
            let wasserstein = wasserstein_hist(&hr, &hg, binning.width());
            MidRangeComparison { variable: name(var), binning, real: hr, generated: hg, wasserstein }
        })
        .collect();
    let points = |c: &[SampleWindow], a: usize, b: usize| -> (Vec<f64>, Vec<f64>) {
        c.iter().flat_map(|s| s.active().iter().map(move |row| (row[a], row[b]))).unzip()
    };
    let joint = joint_pairs
        .iter()
        .map(|&(a, b)| {
            let (rx, ry) = points(real, a, b);
            let (gx, gy) = points(generated, a, b);
            let xb = Binning::pooled(&rx, &gx, HISTOGRAM_BINS);
            let yb = Binning::pooled(&ry, &gy, HISTOGRAM_BINS);
            let hist = |xs: &[f64], ys: &[f64]| {
                let mut h = vec![0.0; xb.bins * yb.bins];
                for (&x, &y) in xs.iter().zip(ys) {
                    h[xb.index(x) * yb.bins + yb.index(y)] += 1.0;
                }
                let n = xs.len().max(1) as f64;
                h.iter_mut().for_each(|c| *c /= n);
                h
            };
            let (hr, hg) = (hist(&rx, &ry), hist(&gx, &gy));
            JointComparison {
                variables: (name(a), name(b)),
                x_binning: xb,
                y_binning: yb,
                total_variation: total_variation(&hr, &hg),
                real: hr,
                generated: hg,
            }
        })
        .collect();
    let step_corr = |c: &[SampleWindow], a: usize, b: usize, j: usize| {
        let (x, y): (Vec<f64>, Vec<f64>) =
            c.iter().filter(|s| s.length > j).map(|s| (s.dynamic[j][a], s.dynamic[j][b])).unzip();
        pearson(&x, &y)
    };
    let pearson_cmp = pearson_pairs
        .iter()
        .map(|&(a, b)| PearsonComparison {
            variables: (name(a), name(b)),
            real: (0..PEARSON_STEPS.min(schema.t_max)).map(|j| step_corr(real, a, b, j)).collect(),
            generated: (0..PEARSON_STEPS.min(schema.t_max)).map(|j| step_corr(generated, a, b, j)).collect(),
        })
        .collect();
    let indicator_corr = |c: &[SampleWindow], g: usize, level: usize, var: usize| {
        let x: Vec<f64> = c.iter().map(|s| f64::from(u8::from(s.categories[g] == level))).collect();
        let y: Vec<f64> = c.iter().map(|s| amplitude(s, var)).collect();
        pearson(&x, &y)
    };
    let mut category_amplitude = Vec::new();
    for (g, group) in schema.groups.iter().enumerate() {
        for (level, level_name) in group.levels.iter().enumerate() {
            for var in 0..v {
                category_amplitude.push(CategoryAmplitude {
                    group: group.name.clone(),
                    level: level_name.clone(),
                    variable: name(var),
                    real: indicator_corr(real, g, level, var),
                    generated: indicator_corr(generated, g, level, var),
                });
            }
        }
    }
    let lengths = |c: &[SampleWindow]| c.iter().map(|s| s.length).collect::<Vec<_>>();
    Ok(FidelityReport {
        mid_range,
        joint,
        pearson: pearson_cmp,
        category_amplitude,
        category_share_real: category_shares(real, schema),
        category_share_generated: category_shares(generated, schema),
        length_ks: ks_statistic(&lengths(real), &lengths(generated)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::CategoryGroup;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn reference_g_means() {
        assert!(close(g_mean(Some(0.973), Some(0.968)).unwrap(), 0.970, 5e-4));
        assert!(close(g_mean(Some(0.662), Some(0.953)).unwrap(), 0.794, 5e-4));
    }

    #[test]
    fn hand_confusion_example() {
        let c = ConfusionCounts { tp: 8, fn_: 2, tn: 90, fp: 10 };
        let m = classification_metrics(&c);
        assert!(close(m.sensitivity.unwrap(), 0.8, 1e-12));
        assert!(close(m.specificity.unwrap(), 0.9, 1e-12));
        assert!(close(m.g_mean.unwrap(), 0.8485, 1e-4));
    }

    #[test]
    fn empty_class_is_undefined() {
        let m = classification_metrics(&ConfusionCounts { tp: 0, fn_: 0, tn: 5, fp: 1 });
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.g_mean, None);
        assert!(m.specificity.is_some());
    }

    #[test]
    fn regression_examples() {
        let r = regression_metrics(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0]).unwrap();
        assert!(close(r.mae, 0.5, 1e-12));
        assert!(close(r.rmse, 0.6455, 1e-4));
        let z = regression_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.mae, z.rmse), (0.0, 0.0));
        let c = regression_metrics(&[1.0, 5.0], &[3.0, 7.0]).unwrap();
        assert!(close(c.mae, 2.0, 1e-12) && close(c.rmse, 2.0, 1e-12));
        assert!(regression_metrics(&[], &[]).is_err());
    }

    #[test]
    fn box_examples() {
        let e = [(0.3, 0.4), (1.2, 0.1), (0.05, 0.05)];
        assert!(close(box_accuracy(&e, BoxSpec::STANDARD[0]).unwrap(), 2.0 / 3.0, 1e-12));
        assert!(close(box_accuracy(&e, BoxSpec::STANDARD[2]).unwrap(), 1.0 / 3.0, 1e-12));
        assert_eq!(box_accuracy(&[], BoxSpec::STANDARD[0]), None);
        assert!(BoxSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!(close(pearson(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 1.0, 1e-12));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, 1e-12));
    }

    fn schema() -> WindowSchema {
        WindowSchema {
            groups: vec![CategoryGroup { name: "g".into(), levels: vec!["a".into(), "b".into()] }],
            variables: vec!["x".into(), "y".into()],
            t_max: 6,
        }
    }

    fn corpus() -> Vec<SampleWindow> {
        (0..20)
            .map(|i| {
                let rows = (0..6).map(|j| vec![j as f64 + i as f64, (i * j) as f64 * 0.5 + (i % 3) as f64]).collect();
                SampleWindow::from_active(format!("s{i}"), format!("s{i}"), vec![i % 2], rows, 6).unwrap()
            })
            .collect()
    }

    #[test]
    fn self_comparison_is_zero_distance() {
        let c = corpus();
        let r = fidelity_report(&c, &c, &schema(), &[(0, 1)], &[(0, 1), (0, 0)]).unwrap();
        assert!(r.mid_range.iter().all(|m| m.wasserstein == 0.0));
        assert!(r.joint.iter().all(|j| j.total_variation == 0.0));
        assert_eq!(r.pearson[0].real, r.pearson[0].generated);
        assert!(r.pearson[1].real.iter().all(|p| close(p.unwrap(), 1.0, 1e-12)));
        assert_eq!(r.length_ks, Some(0.0));
    }

    #[test]
    fn mid_range_of_straight_line() {
        let s = SampleWindow::from_active("s", "s", vec![0], (0..5).map(|j| vec![j as f64, 0.0]).collect(), 6).unwrap();
        assert_eq!(mid_range(&s, 0), 2.0);
    }

    #[test]
    fn distances_are_symmetric() {
        let a = corpus();
        let b: Vec<_> = corpus()
            .into_iter()
            .map(|mut s| {
                s.dynamic[0][0] += 3.0;
                s
            })
            .collect();
        let ab = fidelity_report(&a, &b, &schema(), &[(0, 1)], &[]).unwrap();
        let ba = fidelity_report(&b, &a, &schema(), &[(0, 1)], &[]).unwrap();
        for (x, y) in ab.mid_range.iter().zip(&ba.mid_range) {
            assert!(close(x.wasserstein, y.wasserstein, 1e-12));
        }
        assert!(close(ab.joint[0].total_variation, ba.joint[0].total_variation, 1e-12));
    }
}
