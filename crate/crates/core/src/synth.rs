//! Synthetic fixtures with known ground truth.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Result, VfgError};
use crate::schema::{
    CategoryGroup, CrashRecord, CrashType, DetectorReading, Lighting, Minute, RoadSurface, SampleWindow, Severity,
    WindowSchema, PRE_CRASH_STEPS, STEP_MINUTES,
};

/// Share of category 0 (sinusoid) in the toy corpus.
pub const TOY_SINUSOID_SHARE: f64 = 0.6;
/// Toy lengths are uniform on this inclusive range.
pub const TOY_LENGTHS: (usize, usize) = (4, 8);

/// One two-level group, three variables, eight steps.
pub fn toy_schema() -> WindowSchema {
    WindowSchema {
        groups: vec![CategoryGroup { name: "pattern".into(), levels: vec!["sinusoid".into(), "flat".into()] }],
        variables: vec!["a".into(), "b".into(), "c".into()],
        t_max: TOY_LENGTHS.1,
    }
}

/// Category 0 samples oscillate with amplitude 15–25 around 50; category 1
/// samples stay near 50 with unit noise. Raw (unnormalized) values.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<SampleWindow> {
    let schema = toy_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid sd");
    (0..n)
        .map(|i| {
            let sinusoid = rng.random_bool(TOY_SINUSOID_SHARE);
            let length = rng.random_range(TOY_LENGTHS.0..=TOY_LENGTHS.1);
            let amplitude = rng.random_range(15.0..25.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let rows = (0..length)
                .map(|j| {
                    (0..schema.n_vars())
                        .map(|v| {
                            let base = 50.0 + noise.sample(&mut rng);
                            if sinusoid {
                                let angle = std::f64::consts::FRAC_PI_2 * j as f64 + phase + v as f64;
                                base + amplitude * angle.sin()
                            } else {
                                base
                            }
                        })
                        .collect()
                })
                .collect();
            let id = format!("toy-{i:05}");
            SampleWindow::from_active(id.clone(), id, vec![usize::from(!sinusoid)], rows, schema.t_max)
                .expect("toy lengths within t_max")
                .with_labels(true, Some((0.0, 0.0)))
        })
        .collect()
}

// ----- detector world -------------------------------------------------------

/// Shape of a synthetic route with loop detectors, crashes, daily recurrent
/// congestion and planted primary → secondary pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub route: String,
    /// First day, `YYYY-MM-DD`.
    pub start_date: String,
    pub days: u32,
    pub milepost_start: f64,
    pub milepost_end: f64,
    pub detector_spacing_mi: f64,
    pub lanes: u32,
    /// Crashes that cause no slowdown.
    pub ordinary_crashes: usize,
    pub planted_pairs: usize,
    /// Daily evening slowdown in the middle of the route.
    pub recurrent_congestion: bool,
    /// Planted impact regions are whole multiples of this width.
    pub region_bin_mi: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            route: "I-5".into(),
            start_date: "2021-04-01".into(),
            days: 21,
            milepost_start: 150.0,
            milepost_end: 170.0,
            detector_spacing_mi: 0.5,
            lanes: 2,
            ordinary_crashes: 194,
            planted_pairs: 3,
            recurrent_congestion: true,
            region_bin_mi: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let span = self.milepost_end - self.milepost_start;
        if self.days < 2 || self.lanes == 0 {
            return Err(VfgError::config("world needs at least two days and one lane"));
        }
        if !(self.detector_spacing_mi > 0.0 && self.region_bin_mi > 0.0) || span < 8.0 {
            return Err(VfgError::config("world needs positive spacings and at least 8 miles of route"));
        }
        Minute::parse(&format!("{}T00:00", self.start_date))?;
        Ok(())
    }
}

/// Ground truth for one planted pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub primary_id: String,
    pub secondary_id: String,
    pub time_gap_min: i64,
    pub dist_gap_mi: f64,
    /// Impact block in identification bins: upstream space bins × 5-minute
    /// time bins, both counted from the primary's cell.
    pub space_bins: usize,
    pub time_bins: usize,
    pub drop_mph: f64,
}

/// A slowdown block upstream of `milepost` from `start`.
#[derive(Debug, Clone, Copy)]
struct Slowdown {
    milepost: f64,
    start: Minute,
    extent_mi: f64,
    duration_min: i64,
    drop_mph: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub crashes: Vec<CrashRecord>,
    pub readings: Vec<DetectorReading>,
    pub pairs: Vec<PlantedPair>,
}

impl World {
    /// Planted pair whose primary is `primary_id`.
    pub fn pair(&self, primary_id: &str) -> Option<&PlantedPair> {
        self.pairs.iter().find(|p| p.primary_id == primary_id)
    }

    /// Cells `(space, time)` of the planted block behind `pair`.
    pub fn planted_cells(pair: &PlantedPair) -> BTreeSet<(usize, usize)> {
        (0..pair.space_bins).flat_map(|s| (0..pair.time_bins).map(move |t| (s, t))).collect()
    }
}

fn random_crash(rng: &mut ChaCha8Rng, id: String, route: &str, timestamp: Minute, milepost: f64) -> CrashRecord {
    let pick = |rng: &mut ChaCha8Rng, n: usize| rng.random_range(0..n) as u8 + 1;
    CrashRecord {
        crash_id: id,
        timestamp,
        route: route.to_owned(),
        milepost,
        crash_type: CrashType::from_code(pick(rng, CrashType::ALL.len())).expect("in range"),
        severity: Severity::from_code(pick(rng, Severity::ALL.len())).expect("in range"),
        lighting: Lighting::from_code(pick(rng, Lighting::ALL.len())).expect("in range"),
        surface: RoadSurface::from_code(pick(rng, RoadSurface::ALL.len())).expect("in range"),
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// True when `a` and `b` are close enough that either could interfere with
/// the other's identification.
fn interferes(a: &CrashRecord, b: &CrashRecord) -> bool {
    (a.milepost - b.milepost).abs() <= 3.5 && (a.timestamp.0 - b.timestamp.0).abs() <= 150
}

struct Layout {
    first_day: Minute,
    detectors: Vec<f64>,
}

impl Layout {
    fn new(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let first_day = Minute::parse(&format!("{}T00:00", cfg.start_date))?;
        let mut detectors = Vec::new();
        let mut mp = cfg.milepost_start + 0.1;
        while mp <= cfg.milepost_end + 1e-9 {
            detectors.push(round2(mp));
            mp += cfg.detector_spacing_mi;
        }
        Ok(Self { first_day, detectors })
    }

    /// Crash mileposts keep the full screening distance of detectors
    /// upstream and a detector downstream.
    fn crash_milepost(&self, rng: &mut ChaCha8Rng) -> f64 {
        let lo = self.detectors[0] + 3.05;
        let hi = self.detectors[self.detectors.len() - 1] - 0.3;
        round2(rng.random_range(lo..hi))
    }

    /// Crash times leave room for the pre-crash window and the full
    /// post-crash horizon.
    fn crash_time(&self, rng: &mut ChaCha8Rng, days: u32) -> Minute {
        let span = i64::from(days) * 1440;
        self.first_day.plus(rng.random_range(35..span - 125))
    }
}

/// Speeds, flows and occupancies every five minutes per detector and lane.
fn render_readings(
    cfg: &WorldConfig,
    layout: &Layout,
    slowdowns: &[Slowdown],
    rng: &mut ChaCha8Rng,
) -> Vec<DetectorReading> {
    let noise = Normal::new(0.0, 1.5).expect("valid sd");
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    let span = cfg.milepost_end - cfg.milepost_start;
    let (rc_lo, rc_hi) = (cfg.milepost_start + 0.4 * span, cfg.milepost_start + 0.6 * span);
    let mut out = Vec::new();
    for day in 0..i64::from(cfg.days) {
        let day_shift = unit.sample(rng);
        let rc_intensity = rng.random_range(0.9..1.1);
        for bin in 0..(1440 / STEP_MINUTES) {
            let t = layout.first_day.plus(day * 1440 + bin * STEP_MINUTES);
            let tod = t.minute_of_day() as f64 / 60.0;
            let diurnal = 0.35 + 0.65 * (-(tod - 13.0).powi(2) / 30.0).exp();
            for (d, &mp) in layout.detectors.iter().enumerate() {
                let mut drop = 0.0;
                if cfg.recurrent_congestion && (rc_lo..rc_hi).contains(&mp) && (16.0..18.5).contains(&tod) {
                    drop += 20.0 * rc_intensity;
                }
                for s in slowdowns {
                    let upstream = s.milepost - mp;
                    if (0.0..s.extent_mi).contains(&upstream) && (s.start.0..s.start.0 + s.duration_min).contains(&t.0)
                    {
                        drop += s.drop_mph;
                    }
                }
                for lane in 1..=cfg.lanes {
                    let free = 66.0 - 2.0 * f64::from(lane);
                    let speed = (free + day_shift - drop + noise.sample(rng)).max(3.0);
                    let flow = (12.0 * diurnal * (speed / 65.0).sqrt() + 0.8 * unit.sample(rng)).max(0.0);
                    let occupancy = (5.0 + 40.0 * (1.0 - speed / 65.0).max(0.0) + 3.0 * diurnal + unit.sample(rng))
                        .clamp(0.0, 100.0);
                    out.push(DetectorReading {
                        detector_id: format!("D{d:03}"),
                        route: cfg.route.clone(),
                        milepost: mp,
                        lane,
                        timestamp: t,
                        flow,
                        occupancy,
                        speed,
                    });
                }
            }
        }
    }
    out
}

/// Samples a world. Ordinary crashes are kept clear of planted ones so the
/// planted pairs are the only true secondaries; planted drops grow with the
/// primary's severity.
pub fn world(cfg: &WorldConfig) -> Result<World> {
    let layout = Layout::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut planted: Vec<CrashRecord> = Vec::new();
    let mut pairs = Vec::new();
    let mut slowdowns = Vec::new();
    let mut attempts = 0usize;
    while pairs.len() < cfg.planted_pairs {
        attempts += 1;
        if attempts > 100_000 {
            return Err(VfgError::config("world too small for the requested planted pairs"));
        }
        let n = pairs.len();
        let t = layout.crash_time(&mut rng, cfg.days);
        let mp = layout.crash_milepost(&mut rng);
        let primary = random_crash(&mut rng, format!("P{n:03}"), &cfg.route, t, mp);
        let space_bins = rng.random_range(2..=4usize);
        let time_bins = rng.random_range(6..=18usize);
        let start = t.floor_step();
        let extent_mi = space_bins as f64 * cfg.region_bin_mi;
        let duration_min = time_bins as i64 * STEP_MINUTES;
        let gap = rng.random_range(1..=(start.0 + duration_min - 1 - t.0));
        let dist = round2(rng.random_range(0.1..extent_mi - 0.1));
        let secondary = random_crash(&mut rng, format!("S{n:03}"), &cfg.route, t.plus(gap), round2(mp - dist));
        if planted.iter().any(|c| interferes(c, &primary) || interferes(c, &secondary)) {
            continue;
        }
        let drop_mph = 18.0 + 4.0 * primary.severity.index() as f64 + rng.random_range(0.0..4.0);
        slowdowns.push(Slowdown { milepost: mp, start, extent_mi, duration_min, drop_mph });
        pairs.push(PlantedPair {
            primary_id: primary.crash_id.clone(),
            secondary_id: secondary.crash_id.clone(),
            time_gap_min: gap,
            dist_gap_mi: primary.milepost - secondary.milepost,
            space_bins,
            time_bins,
            drop_mph,
        });
        planted.push(primary);
        planted.push(secondary);
    }
    let mut crashes = planted.clone();
    let mut attempts = 0usize;
    while crashes.len() < planted.len() + cfg.ordinary_crashes {
        attempts += 1;
        if attempts > 1_000_000 {
            return Err(VfgError::config("world too small for the requested ordinary crashes"));
        }
        let t = layout.crash_time(&mut rng, cfg.days);
        let mp = layout.crash_milepost(&mut rng);
        let c = random_crash(&mut rng, format!("C{:04}", crashes.len() - planted.len()), &cfg.route, t, mp);
        if !planted.iter().any(|p| interferes(p, &c)) {
            crashes.push(c);
        }
    }
    let readings = render_readings(cfg, &layout, &slowdowns, &mut rng);
    Ok(World { config: cfg.clone(), crashes, readings, pairs })
}

/// The worked example: a primary at milepost 161.86 at 14:25 on
/// 17 April 2021 with a slowdown of 1.5 miles × 60 minutes, and a crash at
/// milepost 161.2 at 14:50 inside it, amid ordinary crashes elsewhere.
pub fn worked_example() -> World {
    let cfg = WorldConfig {
        seed: 417,
        start_date: "2021-04-10".into(),
        days: 15,
        milepost_start: 154.0,
        milepost_end: 168.0,
        ordinary_crashes: 20,
        planted_pairs: 0,
        ..WorldConfig::default()
    };
    let layout = Layout::new(&cfg).expect("valid worked-example config");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = Minute::parse("2021-04-17T14:25").expect("valid time");
    let mut primary = random_crash(&mut rng, "WA-0417-1".into(), &cfg.route, t, 161.86);
    primary.severity = Severity::Moderate;
    let secondary = random_crash(&mut rng, "WA-0417-2".into(), &cfg.route, t.plus(25), 161.2);
    let slowdown =
        Slowdown { milepost: 161.86, start: t.floor_step(), extent_mi: 1.5, duration_min: 60, drop_mph: 24.0 };
    let pair = PlantedPair {
        primary_id: primary.crash_id.clone(),
        secondary_id: secondary.crash_id.clone(),
        time_gap_min: 25,
        dist_gap_mi: primary.milepost - secondary.milepost,
        space_bins: 3,
        time_bins: 12,
        drop_mph: slowdown.drop_mph,
    };
    let mut crashes = vec![primary, secondary];
    while crashes.len() < 2 + cfg.ordinary_crashes {
        let (t, mp) = (layout.crash_time(&mut rng, cfg.days), layout.crash_milepost(&mut rng));
        let c = random_crash(&mut rng, format!("C{:04}", crashes.len() - 2), &cfg.route, t, mp);
        if !crashes[..2].iter().any(|p| interferes(p, &c)) {
            crashes.push(c);
        }
    }
    let readings = render_readings(&cfg, &layout, &[slowdown], &mut rng);
    World { config: cfg, crashes, readings, pairs: vec![pair] }
}

// ----- imbalanced window corpus ---------------------------------------------

/// Trimmed sample length of the risk corpus.
pub const RISK_STEPS: usize = PRE_CRASH_STEPS;

/// An imbalanced, trimmed window corpus whose positives are driven by a
/// latent risk score: negatives draw it from N(0, 1); positives draw it
/// from the upper tail, a share `hard_share` from the band just above the
/// bulk of the negatives (likelihood ratio 2 against negatives) and the
/// rest from further out (likelihood ratio 20). The score ramps speeds
/// down and occupancies up over the six pre-crash steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskCorpusConfig {
    pub seed: u64,
    pub negatives: usize,
    pub positives: usize,
    pub hard_share: f64,
}

impl Default for RiskCorpusConfig {
    fn default() -> Self {
        Self { seed: 0, negatives: 9000, positives: 150, hard_share: 0.35 }
    }
}

/// Band edges `(lower, upper)` of the hard and easy positive bands in risk
/// units, chosen so the likelihood ratios against N(0, 1) are 2 and 20.
pub fn risk_bands(hard_share: f64) -> (f64, f64) {
    let unit = statrs::distribution::Normal::standard();
    // Masses under the negative density: hard band share/2, easy tail
    // (1 − share)/20.
    let tail = (1.0 - hard_share) / 20.0;
    let band = hard_share / 2.0;
    (unit.inverse_cdf(1.0 - tail - band), unit.inverse_cdf(1.0 - tail))
}

/// Standard normal draw restricted to `[lo, hi)` by inverse-CDF sampling.
fn truncated_normal(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let unit = statrs::distribution::Normal::standard();
    let (a, b) = (unit.cdf(lo), unit.cdf(hi));
    unit.inverse_cdf(rng.random_range(a..b)).clamp(lo, hi)
}

/// Per-variable `(base mean, between-sample sd, per-step sd, risk slope)`;
/// the slope multiplies risk × ramp, where the ramp climbs from 1/6 to 1.
const RISK_PROFILE: [(f64, f64, f64, f64); 15] = [
    (11.0, 0.8, 0.3, -1.5), // Up_Avg_Flow
    (9.0, 0.8, 0.3, 5.0),   // Up_Avg_Occ
    (62.0, 1.0, 0.6, -9.0), // Up_Avg_Spd
    (1.2, 0.2, 0.2, 0.4),   // Up_Dif_AvgFlow
    (1.5, 0.3, 0.2, 1.0),   // Up_Dif_AvgOcc
    (2.5, 0.4, 0.3, 1.5),   // Up_Dif_AvgSpd
    (11.5, 0.8, 0.3, -0.5), // Down_Avg_Flow
    (8.5, 0.8, 0.3, 1.5),   // Down_Avg_Occ
    (63.0, 1.0, 0.6, -3.0), // Down_Avg_Spd
    (1.1, 0.2, 0.2, 0.1),   // Down_Dif_AvgFlow
    (1.4, 0.3, 0.2, 0.3),   // Down_Dif_AvgOcc
    (2.4, 0.4, 0.3, 0.5),   // Down_Dif_AvgSpd
    (0.8, 0.2, 0.2, 1.0),   // Updown_AvgFlow
    (1.2, 0.3, 0.2, 3.5),   // Updown_AvgOcc
    (1.5, 0.3, 0.3, 6.0),   // Updown_AvgSpd
];

/// Schema of the risk corpus: the crash schema cut to six steps.
pub fn risk_schema() -> WindowSchema {
    WindowSchema::crash().with_t_max(RISK_STEPS)
}

/// Labeled trimmed windows, positives first in id order `pos-*`, then
/// `neg-*`. Positive gaps shrink with risk: time ≈ 1.6 − 0.4·risk hours,
/// distance ≈ 2.2 − 0.5·risk miles, plus noise, floored at small positive
/// values.
pub fn risk_corpus(cfg: &RiskCorpusConfig) -> Result<Vec<SampleWindow>> {
    if !(0.0..1.0).contains(&cfg.hard_share) {
        return Err(VfgError::config(format!("hard_share must be in [0, 1), got {}", cfg.hard_share)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schema = risk_schema();
    let (lo, hi) = risk_bands(cfg.hard_share);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let sizes = schema.group_sizes();
    let mut out = Vec::with_capacity(cfg.positives + cfg.negatives);
    for i in 0..cfg.positives + cfg.negatives {
        let positive = i < cfg.positives;
        let risk = if !positive {
            unit.sample(&mut rng)
        } else if rng.random_bool(cfg.hard_share) {
            truncated_normal(&mut rng, lo, hi)
        } else {
            truncated_normal(&mut rng, hi, f64::INFINITY)
        };
        let bases: Vec<f64> = RISK_PROFILE.iter().map(|&(m, sd, _, _)| m + sd * unit.sample(&mut rng)).collect();
        let rows = (0..RISK_STEPS)
            .map(|j| {
                let ramp = (j + 1) as f64 / RISK_STEPS as f64;
                RISK_PROFILE
                    .iter()
                    .zip(&bases)
                    .map(|(&(_, _, step_sd, slope), base)| {
                        (base + slope * risk * ramp + step_sd * unit.sample(&mut rng)).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let categories = sizes.iter().map(|&n| rng.random_range(0..n)).collect();
        let id = if positive { format!("pos-{i:05}") } else { format!("neg-{:05}", i - cfg.positives) };
        let sample = SampleWindow::from_active(id.clone(), id, categories, rows, RISK_STEPS)?;
        let gaps = positive.then(|| {
            let t = (1.6 - 0.4 * risk + 0.1 * unit.sample(&mut rng)).max(0.05);
            let d = (2.2 - 0.5 * risk + 0.1 * unit.sample(&mut rng)).max(0.05);
            (t, d)
        });
        out.push(sample.with_labels(positive, gaps));
    }
    Ok(out)
}

/// `count` fresh positives from the risk corpus's own positive distribution,
/// marked generated and stripped of gap labels like GAN output. A stand-in
/// generator for rebalancing experiments that isolates the predictor's
/// response to the training ratio from GAN sample quality.
pub fn risk_oracle(cfg: &RiskCorpusConfig, count: usize, seed: u64) -> Result<Vec<SampleWindow>> {
    let draws = risk_corpus(&RiskCorpusConfig { seed, positives: count, negatives: 0, ..cfg.clone() })?;
    Ok(draws
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.id = format!("oracle-{i:05}");
            s.crash_id = s.id.clone();
            s.generated = true;
            s.time_gap_h = None;
            s.dist_gap_mi = None;
            s
        })
        .collect())
}
