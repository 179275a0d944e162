//! Speed-contour identification of secondary crashes: threshold screening,
//! baseline differencing against non-crash days, impact-region growth and
//! gap labeling.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::schema::{CrashRecord, Minute, STEP_MINUTES};
use crate::window::ReadingIndex;

const MINUTES_PER_DAY: i64 = 24 * 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentificationConfig {
    /// Maximum upstream distance between primary and secondary.
    pub screen_distance_mi: f64,
    /// Maximum delay between primary and secondary.
    pub screen_time_min: i64,
    pub bin_width_mi: f64,
    /// Minimum baseline-minus-crash-day speed for a cell to be impacted.
    pub deficit_mph: f64,
    /// Restrict the baseline to days on the same weekday as the crash.
    pub same_weekday: bool,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        Self {
            screen_distance_mi: 3.0,
            screen_time_min: 120,
            bin_width_mi: 0.5,
            deficit_mph: 10.0,
            same_weekday: false,
        }
    }
}

impl IdentificationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("screen_distance_mi", self.screen_distance_mi),
            ("screen_time_min", self.screen_time_min as f64),
            ("bin_width_mi", self.bin_width_mi),
            ("deficit_mph", self.deficit_mph),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(VfgError::config(format!("identification.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn space_bins(&self) -> usize {
        (self.screen_distance_mi / self.bin_width_mi).ceil().max(1.0) as usize
    }

    /// Time bins from the primary's floored minute through the end of the
    /// screening interval.
    pub fn time_bins(&self) -> usize {
        (self.screen_time_min / STEP_MINUTES + 1) as usize
    }

    fn space_bin(&self, upstream_mi: f64) -> Option<usize> {
        if !(0.0..=self.screen_distance_mi).contains(&upstream_mi) {
            return None;
        }
        Some(((upstream_mi / self.bin_width_mi).floor() as usize).min(self.space_bins() - 1))
    }
}

/// A (primary, candidate secondary) pair passing the fixed thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub primary: usize,
    pub secondary: usize,
    pub gap_min: i64,
    pub upstream_mi: f64,
}

/// Pairs where the second crash occurs within the screening interval after
/// the first and at most the screening distance upstream (lower milepost) on
/// the same route. Indices refer to `crashes`.
pub fn screen_candidates(crashes: &[CrashRecord], cfg: &IdentificationConfig) -> Vec<Candidate> {
    let mut order: Vec<usize> = (0..crashes.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&crashes[a], &crashes[b]);
        (&x.route, x.timestamp, &x.crash_id).cmp(&(&y.route, y.timestamp, &y.crash_id))
    });
    let mut out = Vec::new();
    for (pos, &a) in order.iter().enumerate() {
        let pa = &crashes[a];
        for &b in &order[pos + 1..] {
            let pb = &crashes[b];
            if pb.route != pa.route {
                break;
            }
            let gap = pb.timestamp.0 - pa.timestamp.0;
            if gap > cfg.screen_time_min {
                break;
            }
            let upstream = pa.milepost - pb.milepost;
            if gap > 0 && (0.0..=cfg.screen_distance_mi).contains(&upstream) {
                out.push(Candidate { primary: a, secondary: b, gap_min: gap, upstream_mi: upstream });
            }
        }
    }
    out
}

/// Space × time grid of mean speeds upstream of an origin point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedContour {
    pub route: String,
    /// Milepost of space bin 0's downstream edge.
    pub origin_milepost: f64,
    pub bin_width_mi: f64,
    /// Start of time bin 0.
    pub start: Minute,
    pub n_space: usize,
    pub n_time: usize,
    speeds: Vec<Option<f64>>,
    counts: Vec<usize>,
}

impl SpeedContour {
    fn empty(route: &str, origin_milepost: f64, start: Minute, cfg: &IdentificationConfig) -> Self {
        let (n_space, n_time) = (cfg.space_bins(), cfg.time_bins());
        Self {
            route: route.to_owned(),
            origin_milepost,
            bin_width_mi: cfg.bin_width_mi,
            start,
            n_space,
            n_time,
            speeds: vec![None; n_space * n_time],
            counts: vec![0; n_space * n_time],
        }
    }

    /// Mean speed per cell from the readings on the day shifted by
    /// `day_offset` relative to `start`.
    pub fn observe(
        index: &ReadingIndex,
        route: &str,
        origin_milepost: f64,
        start: Minute,
        day_offset: i64,
        cfg: &IdentificationConfig,
    ) -> Self {
        let mut c = Self::empty(route, origin_milepost, start, cfg);
        let mut sums = vec![0.0; c.speeds.len()];
        let lo = origin_milepost - cfg.screen_distance_mi;
        let shift = day_offset * MINUTES_PER_DAY;
        for det in index.detectors_in(route, lo - 1e-9, origin_milepost) {
            let Some(s) = cfg.space_bin(origin_milepost - det.milepost) else { continue };
            for t in 0..c.n_time {
                let from = start.plus(shift + t as i64 * STEP_MINUTES);
                let (sum, n) = det.speed_sum(from, from.plus(STEP_MINUTES));
                sums[s * c.n_time + t] += sum;
                c.counts[s * c.n_time + t] += n;
            }
        }
        for (i, sum) in sums.into_iter().enumerate() {
            if c.counts[i] > 0 {
                c.speeds[i] = Some(sum / c.counts[i] as f64);
            }
        }
        c
    }

    pub fn get(&self, space: usize, time: usize) -> Option<f64> {
        self.speeds[space * self.n_time + time]
    }

    pub fn count(&self, space: usize, time: usize) -> usize {
        self.counts[space * self.n_time + time]
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.iter().all(Option::is_none)
    }

    /// Cellwise mean of several contours over the cells each one covers.
    pub fn mean_of(template: &SpeedContour, days: &[SpeedContour]) -> SpeedContour {
        let mut out = template.clone();
        for i in 0..out.speeds.len() {
            let present: Vec<f64> = days.iter().filter_map(|d| d.speeds[i]).collect();
            out.counts[i] = present.len();
            out.speeds[i] = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        }
        out
    }

    /// Baseline minus this contour, where both are present.
    pub fn deficit(&self, baseline: &SpeedContour, space: usize, time: usize) -> Option<f64> {
        Some(baseline.get(space, time)? - self.get(space, time)?)
    }
}

/// Days that qualify as non-crash days for a window starting at `start`:
/// no crash on the route within the screening distance either side of the
/// origin, from one screening interval before the window to its end.
fn baseline_days(
    crashes: &[CrashRecord],
    index: &ReadingIndex,
    origin: &CrashRecord,
    start: Minute,
    cfg: &IdentificationConfig,
) -> Vec<i64> {
    let Some((first, last)) = index.time_span() else { return Vec::new() };
    let window = cfg.time_bins() as i64 * STEP_MINUTES;
    let (d0, d1) = (first.day() - start.day(), last.day() - start.day());
    (d0..=d1)
        .filter(|&k| k != 0 && (!cfg.same_weekday || k % 7 == 0))
        .filter(|&k| {
            let from = start.0 + k * MINUTES_PER_DAY - cfg.screen_time_min;
            let to = start.0 + k * MINUTES_PER_DAY + window;
            !crashes.iter().any(|c| {
                c.route == origin.route
                    && (c.milepost - origin.milepost).abs() <= cfg.screen_distance_mi
                    && (from..to).contains(&c.timestamp.0)
            })
        })
        .collect()
}

/// Cellwise mean speed over all qualifying non-crash days for the window of
/// `crash`. Errors when no day covers any cell.
pub fn baseline_contour(
    crashes: &[CrashRecord],
    index: &ReadingIndex,
    crash: &CrashRecord,
    cfg: &IdentificationConfig,
) -> Result<SpeedContour> {
    let start = crash.timestamp.floor_step();
    let days: Vec<SpeedContour> = baseline_days(crashes, index, crash, start, cfg)
        .into_iter()
        .map(|k| SpeedContour::observe(index, &crash.route, crash.milepost, start, k, cfg))
        .collect();
    let template = SpeedContour::empty(&crash.route, crash.milepost, start, cfg);
    let baseline = SpeedContour::mean_of(&template, &days);
    if baseline.is_empty() {
        return Err(VfgError::data(format!("crash {}: no non-crash day covers its contour window", crash.crash_id)));
    }
    Ok(baseline)
}

/// The crash-day contour for the window of `crash`.
pub fn crash_day_contour(index: &ReadingIndex, crash: &CrashRecord, cfg: &IdentificationConfig) -> SpeedContour {
    SpeedContour::observe(index, &crash.route, crash.milepost, crash.timestamp.floor_step(), 0, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRegion {
    pub origin: String,
    /// (space bin, time bin) cells.
    pub cells: BTreeSet<(usize, usize)>,
    pub extent_mi: f64,
    pub extent_min: i64,
}

impl ImpactRegion {
    pub fn contains(&self, space: usize, time: usize) -> bool {
        self.cells.contains(&(space, time))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Grows the 4-connected region of impacted cells containing the origin cell
/// (0, 0). Errors when the origin cell is absent from either contour.
pub fn extract_impact_region(
    day: &SpeedContour,
    baseline: &SpeedContour,
    cfg: &IdentificationConfig,
    origin: &str,
) -> Result<ImpactRegion> {
    if (day.n_space, day.n_time) != (baseline.n_space, baseline.n_time) {
        return Err(VfgError::data(format!("crash {origin}: contour grids differ in shape")));
    }
    let seed_deficit = day
        .deficit(baseline, 0, 0)
        .ok_or_else(|| VfgError::data(format!("crash {origin}: origin contour cell is absent")))?;
    let mut cells = BTreeSet::new();
    if seed_deficit >= cfg.deficit_mph {
        let impacted = |s: usize, t: usize| day.deficit(baseline, s, t).is_some_and(|d| d >= cfg.deficit_mph);
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        cells.insert((0, 0));
        while let Some((s, t)) = queue.pop_front() {
            let neighbours = [(s.wrapping_sub(1), t), (s + 1, t), (s, t.wrapping_sub(1)), (s, t + 1)];
            for (ns, nt) in neighbours {
                if ns < day.n_space && nt < day.n_time && !cells.contains(&(ns, nt)) && impacted(ns, nt) {
                    cells.insert((ns, nt));
                    queue.push_back((ns, nt));
                }
            }
        }
    }
    let extent_mi =
        cells.iter().map(|&(s, _)| ((s + 1) as f64 * cfg.bin_width_mi).min(cfg.screen_distance_mi)).fold(0.0, f64::max);
    let extent_min = cells.iter().map(|&(_, t)| (t as i64 + 1) * STEP_MINUTES).max().unwrap_or(0);
    Ok(ImpactRegion { origin: origin.to_owned(), cells, extent_mi, extent_min })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Ordinary,
    Primary,
    Secondary,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Ordinary => "ordinary",
            LabelKind::Primary => "primary",
            LabelKind::Secondary => "secondary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashLabel {
    pub crash_id: String,
    pub label: LabelKind,
    pub primary_id: Option<String>,
    pub time_gap_h: Option<f64>,
    pub dist_gap_mi: Option<f64>,
}

/// Contours and region computed for one screened primary.
#[derive(Debug, Clone)]
pub struct Investigation {
    pub crash_id: String,
    pub day: SpeedContour,
    pub baseline: SpeedContour,
    pub region: ImpactRegion,
}

#[derive(Debug, Clone)]
pub struct Labeling {
    /// One label per crash, ordered by crash id.
    pub labels: Vec<CrashLabel>,
    /// Crashes whose identification was aborted, with the reason.
    pub diagnostics: Vec<String>,
    pub investigations: Vec<Investigation>,
}

impl Labeling {
    pub fn count(&self, kind: LabelKind) -> usize {
        self.labels.iter().filter(|l| l.label == kind).count()
    }

    pub fn get(&self, crash_id: &str) -> Option<&CrashLabel> {
        self.labels.binary_search_by(|l| l.crash_id.as_str().cmp(crash_id)).ok().map(|i| &self.labels[i])
    }
}

fn investigate(
    crashes: &[CrashRecord],
    index: &ReadingIndex,
    crash: &CrashRecord,
    cfg: &IdentificationConfig,
) -> Result<Investigation> {
    let baseline = baseline_contour(crashes, index, crash, cfg)?;
    let day = crash_day_contour(index, crash, cfg);
    let region = extract_impact_region(&day, &baseline, cfg, &crash.crash_id)?;
    Ok(Investigation { crash_id: crash.crash_id.clone(), day, baseline, region })
}

/// Labels every crash ordinary, primary or secondary. Primaries are
/// processed in time order; a candidate inside several regions goes to the
/// earliest primary, and a crash already labeled secondary does not act as
/// a primary.
pub fn label_secondaries(
    crashes: &[CrashRecord],
    index: &ReadingIndex,
    cfg: &IdentificationConfig,
) -> Result<Labeling> {
    cfg.validate()?;
    let mut ids = HashSet::new();
    if let Some(dup) = crashes.iter().find(|c| !ids.insert(&c.crash_id)) {
        return Err(VfgError::data(format!("duplicate crash id {}", dup.crash_id)));
    }
    let candidates = screen_candidates(crashes, cfg);
    let mut primaries: Vec<usize> = candidates.iter().map(|c| c.primary).collect();
    primaries.sort_by(|&a, &b| {
        (crashes[a].timestamp, &crashes[a].crash_id).cmp(&(crashes[b].timestamp, &crashes[b].crash_id))
    });
    primaries.dedup();

    let results: Vec<Result<Investigation>> =
        primaries.par_iter().map(|&p| investigate(crashes, index, &crashes[p], cfg)).collect();

    let mut labels: Vec<CrashLabel> = crashes
        .iter()
        .map(|c| CrashLabel {
            crash_id: c.crash_id.clone(),
            label: LabelKind::Ordinary,
            primary_id: None,
            time_gap_h: None,
            dist_gap_mi: None,
        })
        .collect();
    let mut diagnostics = Vec::new();
    let mut investigations = Vec::new();
    for (&p, result) in primaries.iter().zip(results) {
        let inv = match result {
            Ok(inv) => inv,
            Err(e) => {
                diagnostics.push(e.to_string());
                continue;
            }
        };
        if labels[p].label != LabelKind::Secondary {
            for cand in candidates.iter().filter(|c| c.primary == p) {
                let b = cand.secondary;
                if labels[b].label != LabelKind::Ordinary {
                    continue;
                }
                let space = cfg.space_bin(cand.upstream_mi).expect("screened distance");
                let time = ((crashes[b].timestamp.floor_step().0 - inv.day.start.0) / STEP_MINUTES) as usize;
                if time < inv.day.n_time && inv.region.contains(space, time) {
                    labels[b] = CrashLabel {
                        crash_id: crashes[b].crash_id.clone(),
                        label: LabelKind::Secondary,
                        primary_id: Some(crashes[p].crash_id.clone()),
                        time_gap_h: Some(cand.gap_min as f64 / 60.0),
                        dist_gap_mi: Some(cand.upstream_mi),
                    };
                    labels[p].label = LabelKind::Primary;
                }
            }
        }
        investigations.push(inv);
    }
    labels.sort_by(|a, b| a.crash_id.cmp(&b.crash_id));
    Ok(Labeling { labels, diagnostics, investigations })
}
