//! Assembling fixed-schema sample windows from crash and detector records.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, VfgError};
use crate::identify::{CrashLabel, LabelKind};
use crate::schema::{
    activation_flags, CrashRecord, DetectorReading, Minute, SampleWindow, PRE_CRASH_STEPS, STEP_MINUTES, T_MAX,
};

#[derive(Debug, Clone, Copy)]
struct Obs {
    t: Minute,
    flow: f64,
    occ: f64,
    speed: f64,
}

/// Time-sorted readings of one detector, split by lane.
#[derive(Debug, Clone)]
pub struct DetectorSeries {
    pub detector_id: String,
    pub route: String,
    pub milepost: f64,
    lanes: BTreeMap<u32, Vec<Obs>>,
}

/// Per-lane means over a time bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMeans {
    pub flow: f64,
    pub occupancy: f64,
    pub speed: f64,
}

impl DetectorSeries {
    fn lane_window(obs: &[Obs], start: Minute, end: Minute) -> &[Obs] {
        let lo = obs.partition_point(|o| o.t < start);
        let hi = obs.partition_point(|o| o.t < end);
        &obs[lo..hi]
    }

    /// Lane means over `[start, end)` for lanes that have readings, in lane order.
    pub fn lane_means(&self, start: Minute, end: Minute) -> Vec<LaneMeans> {
        self.lanes
            .values()
            .filter_map(|obs| {
                let w = Self::lane_window(obs, start, end);
                if w.is_empty() {
                    return None;
                }
                let n = w.len() as f64;
                Some(LaneMeans {
                    flow: w.iter().map(|o| o.flow).sum::<f64>() / n,
                    occupancy: w.iter().map(|o| o.occ).sum::<f64>() / n,
                    speed: w.iter().map(|o| o.speed).sum::<f64>() / n,
                })
            })
            .collect()
    }

    /// Sum and count of speed readings over `[start, end)` across lanes.
    pub fn speed_sum(&self, start: Minute, end: Minute) -> (f64, usize) {
        self.lanes.values().fold((0.0, 0), |(s, n), obs| {
            let w = Self::lane_window(obs, start, end);
            (s + w.iter().map(|o| o.speed).sum::<f64>(), n + w.len())
        })
    }

    pub fn time_span(&self) -> Option<(Minute, Minute)> {
        let first = self.lanes.values().filter_map(|o| o.first()).map(|o| o.t).min()?;
        let last = self.lanes.values().filter_map(|o| o.last()).map(|o| o.t).max()?;
        Some((first, last))
    }
}

/// Immutable store of detector readings indexed by route and milepost.
#[derive(Debug, Clone, Default)]
pub struct ReadingIndex {
    /// Per route, detectors sorted by milepost then id.
    routes: HashMap<String, Vec<DetectorSeries>>,
}

impl ReadingIndex {
    pub fn new(readings: &[DetectorReading]) -> Self {
        let mut by_id: BTreeMap<String, DetectorSeries> = BTreeMap::new();
        for r in readings {
            let series = by_id.entry(r.detector_id.clone()).or_insert_with(|| DetectorSeries {
                detector_id: r.detector_id.clone(),
                route: r.route.clone(),
                milepost: r.milepost,
                lanes: BTreeMap::new(),
            });
            series.lanes.entry(r.lane).or_default().push(Obs {
                t: r.timestamp,
                flow: r.flow,
                occ: r.occupancy,
                speed: r.speed,
            });
        }
        let mut routes: HashMap<String, Vec<DetectorSeries>> = HashMap::new();
        for (_, mut s) in by_id {
            for obs in s.lanes.values_mut() {
                obs.sort_by_key(|o| o.t);
            }
            routes.entry(s.route.clone()).or_default().push(s);
        }
        for list in routes.values_mut() {
            list.sort_by(|a, b| a.milepost.total_cmp(&b.milepost).then_with(|| a.detector_id.cmp(&b.detector_id)));
        }
        Self { routes }
    }

    pub fn detectors(&self, route: &str) -> &[DetectorSeries] {
        self.routes.get(route).map_or(&[], Vec::as_slice)
    }

    /// Detectors on `route` with milepost in `(lo, hi]`.
    pub fn detectors_in(&self, route: &str, lo: f64, hi: f64) -> impl Iterator<Item = &DetectorSeries> {
        self.detectors(route).iter().filter(move |d| d.milepost > lo && d.milepost <= hi)
    }

    /// Nearest detector at or below `milepost` (upstream, travel in the
    /// increasing-milepost direction) and nearest strictly above it
    /// (downstream). Equal mileposts resolve to the smaller detector id.
    pub fn match_detectors(&self, route: &str, milepost: f64) -> (Option<&DetectorSeries>, Option<&DetectorSeries>) {
        let list = self.detectors(route);
        let split = list.partition_point(|d| d.milepost <= milepost);
        let upstream = split.checked_sub(1).map(|i| {
            let mp = list[i].milepost;
            let first = list[..=i].partition_point(|d| d.milepost < mp);
            &list[first]
        });
        let downstream = list.get(split);
        (upstream, downstream)
    }

    /// First and last reading time across the whole store.
    pub fn time_span(&self) -> Option<(Minute, Minute)> {
        let spans: Vec<_> = self.routes.values().flatten().filter_map(DetectorSeries::time_span).collect();
        Some((spans.iter().map(|s| s.0).min()?, spans.iter().map(|s| s.1).max()?))
    }
}

/// Station-level aggregate of one detector over one bin: averages then
/// adjacent-lane mean absolute differences.
fn station_features(lanes: &[LaneMeans]) -> [f64; 6] {
    let n = lanes.len() as f64;
    let avg = |f: fn(&LaneMeans) -> f64| lanes.iter().map(f).sum::<f64>() / n;
    let dif = |f: fn(&LaneMeans) -> f64| {
        if lanes.len() < 2 {
            0.0
        } else {
            lanes.windows(2).map(|w| (f(&w[0]) - f(&w[1])).abs()).sum::<f64>() / (n - 1.0)
        }
    };
    [avg(|l| l.flow), avg(|l| l.occupancy), avg(|l| l.speed), dif(|l| l.flow), dif(|l| l.occupancy), dif(|l| l.speed)]
}

/// The fifteen dynamic variables for one bin, in table order.
fn bin_features(up: &[LaneMeans], down: &[LaneMeans]) -> Vec<f64> {
    let u = station_features(up);
    let d = station_features(down);
    let mut row = Vec::with_capacity(15);
    row.extend_from_slice(&u);
    row.extend_from_slice(&d);
    row.extend([(u[0] - d[0]).abs(), (u[1] - d[1]).abs(), (u[2] - d[2]).abs()]);
    row
}

/// Builds the window for `crash`: six pre-crash bins plus
/// `horizon_after_min / 5` post-crash bins, from the matched upstream and
/// downstream detectors.
pub fn build_window(crash: &CrashRecord, index: &ReadingIndex, horizon_after_min: i64) -> Result<SampleWindow> {
    let reject = |reason: String| VfgError::Window { crash_id: crash.crash_id.clone(), reason };
    if horizon_after_min < 0 || horizon_after_min % STEP_MINUTES != 0 {
        return Err(reject(format!("horizon {horizon_after_min} min is not a non-negative multiple of 5")));
    }
    let length = PRE_CRASH_STEPS + (horizon_after_min / STEP_MINUTES) as usize;
    if length > T_MAX {
        return Err(reject(format!("length {length} exceeds {T_MAX} steps")));
    }
    let (up, down) = index.match_detectors(&crash.route, crash.milepost);
    let (Some(up), Some(down)) = (up, down) else {
        return Err(reject("no upstream/downstream detector pair on route".into()));
    };
    let anchor = crash.timestamp.floor_step();
    let first = anchor.plus(-(PRE_CRASH_STEPS as i64) * STEP_MINUTES);
    let mut rows = Vec::with_capacity(length);
    for step in 0..length {
        let start = first.plus(step as i64 * STEP_MINUTES);
        let end = start.plus(STEP_MINUTES);
        let ul = up.lane_means(start, end);
        let dl = down.lane_means(start, end);
        if ul.is_empty() || dl.is_empty() {
            return Err(reject(format!("missing detector data in bin starting {start}")));
        }
        rows.push(bin_features(&ul, &dl));
    }
    SampleWindow::from_active(crash.crash_id.clone(), crash.crash_id.clone(), crash.categories(), rows, T_MAX)
}

/// Post-crash horizon for a secondary `gap_min` minutes after its primary:
/// the whole five-minute bins that end at or before the secondary.
pub fn horizon_for_gap(gap_min: i64) -> i64 {
    (gap_min.max(0) / STEP_MINUTES) * STEP_MINUTES
}

/// Cuts a window back to its pre-crash steps.
pub fn trim(sample: &SampleWindow) -> Result<SampleWindow> {
    if sample.length < PRE_CRASH_STEPS {
        return Err(VfgError::data(format!(
            "sample {}: length {} shorter than {PRE_CRASH_STEPS} pre-crash steps",
            sample.id, sample.length
        )));
    }
    let mut out = sample.clone();
    let n_vars = out.n_vars();
    for row in &mut out.dynamic[PRE_CRASH_STEPS..] {
        *row = vec![0.0; n_vars];
    }
    out.length = PRE_CRASH_STEPS;
    out.flags = activation_flags(PRE_CRASH_STEPS, out.t_max());
    // Pseudo-statics describe the full window; they are recomputed from the
    // trimmed values when needed.
    out.pseudo_static = None;
    Ok(out)
}

/// Samples built from a labeled crash corpus, with the crashes whose window
/// could not be built.
#[derive(Debug, Clone, Default)]
pub struct Assembly {
    pub samples: Vec<SampleWindow>,
    pub rejected: Vec<String>,
}

/// One sample per ordinary crash (negative, pre-crash window) and one per
/// secondary crash (positive, window anchored at its primary and extended up
/// to the secondary). Primaries only contribute through their secondaries.
/// Positive samples carry the primary's crash id and static attributes and
/// the secondary's id as sample id. With `trimmed`, every window keeps only
/// its pre-crash steps.
pub fn assemble_samples(
    crashes: &[CrashRecord],
    labels: &[CrashLabel],
    index: &ReadingIndex,
    trimmed: bool,
) -> Result<Assembly> {
    let by_id: HashMap<&str, &CrashRecord> = crashes.iter().map(|c| (c.crash_id.as_str(), c)).collect();
    let mut out = Assembly::default();
    for label in labels {
        let crash = by_id
            .get(label.crash_id.as_str())
            .ok_or_else(|| VfgError::data(format!("label for unknown crash {}", label.crash_id)))?;
        let built = match label.label {
            LabelKind::Primary => continue,
            LabelKind::Ordinary => build_window(crash, index, 0).map(|w| w.with_labels(false, None)),
            LabelKind::Secondary => {
                let (Some(pid), Some(t), Some(d)) = (&label.primary_id, label.time_gap_h, label.dist_gap_mi) else {
                    return Err(VfgError::data(format!("secondary {} lacks primary or gaps", label.crash_id)));
                };
                let primary = by_id.get(pid.as_str()).ok_or_else(|| {
                    VfgError::data(format!("secondary {} names unknown primary {pid}", label.crash_id))
                })?;
                let gap_min = crash.timestamp.0 - primary.timestamp.0;
                let horizon = if trimmed { 0 } else { horizon_for_gap(gap_min) };
                build_window(primary, index, horizon).map(|mut w| {
                    w.id = label.crash_id.clone();
                    w.with_labels(true, Some((t, d)))
                })
            }
        };
        match built {
            Ok(w) => out.samples.push(w),
            Err(e @ VfgError::Window { .. }) => out.rejected.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    out.samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
