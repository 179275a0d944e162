//! Record types shared by every pipeline stage.

use std::fmt;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};

/// Dynamic variables in their fixed table order.
pub const DYNAMIC_VARIABLES: [&str; 15] = [
    "Up_Avg_Flow",
    "Up_Avg_Occ",
    "Up_Avg_Spd",
    "Up_Dif_AvgFlow",
    "Up_Dif_AvgOcc",
    "Up_Dif_AvgSpd",
    "Down_Avg_Flow",
    "Down_Avg_Occ",
    "Down_Avg_Spd",
    "Down_Dif_AvgFlow",
    "Down_Dif_AvgOcc",
    "Down_Dif_AvgSpd",
    "Updown_AvgFlow",
    "Updown_AvgOcc",
    "Updown_AvgSpd",
];

/// Five-minute steps before the crash that every window carries.
pub const PRE_CRASH_STEPS: usize = 6;
/// Longest window: 30 minutes before plus the 2-hour impact horizon.
pub const T_MAX: usize = 30;
pub const STEP_MINUTES: i64 = 5;

/// Minutes since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Minute(pub i64);

impl Minute {
    /// Parses `YYYY-MM-DDTHH:MM[:SS]` with an optional UTC offset; seconds
    /// are truncated.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Self(dt.timestamp().div_euclid(60)));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Self(dt.and_utc().timestamp().div_euclid(60)));
            }
        }
        Err(VfgError::data(format!("unparseable timestamp {s:?}")))
    }

    /// Floors to the enclosing five-minute boundary.
    pub fn floor_step(self) -> Self {
        Self(self.0.div_euclid(STEP_MINUTES) * STEP_MINUTES)
    }

    pub fn day(self) -> i64 {
        self.0.div_euclid(1440)
    }

    pub fn minute_of_day(self) -> i64 {
        self.0.rem_euclid(1440)
    }

    pub fn plus(self, minutes: i64) -> Self {
        Self(self.0 + minutes)
    }
}

impl fmt::Display for Minute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0 * 60, 0) {
            Some(dt) => write!(f, "{}", dt.naive_utc().format("%Y-%m-%dT%H:%M")),
            None => write!(f, "minute:{}", self.0),
        }
    }
}

macro_rules! coded_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $code:expr),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// 1-based code as used in the CSV files.
            pub fn code(self) -> u8 {
                match self { $($name::$variant => $code),+ }
            }

            pub fn from_code(code: u8) -> Result<Self> {
                match code {
                    $($code => Ok($name::$variant),)+
                    other => Err(VfgError::data(format!(
                        "{} code {} outside 1..={}", stringify!($name), other, Self::ALL.len()
                    ))),
                }
            }

            /// 0-based position within the one-hot group.
            pub fn index(self) -> usize {
                self.code() as usize - 1
            }
        }
    };
}

coded_enum!(
    CrashType { RearEnd = 1, SideswipeAngleHeadOn = 2, Obstacle = 3, Other = 4 }
);
coded_enum!(Severity { Minor = 1, Moderate = 2, Severe = 3 });
coded_enum!(Lighting { Bright = 1, Transitional = 2, Dark = 3 });
coded_enum!(RoadSurface { Dry = 1, Wet = 2, Other = 3 });

#[derive(Debug, Clone, PartialEq)]
pub struct CrashRecord {
    pub crash_id: String,
    pub timestamp: Minute,
    pub route: String,
    pub milepost: f64,
    pub crash_type: CrashType,
    pub severity: Severity,
    pub lighting: Lighting,
    pub surface: RoadSurface,
}

impl CrashRecord {
    /// Category indices in schema group order.
    pub fn categories(&self) -> Vec<usize> {
        vec![self.crash_type.index(), self.severity.index(), self.lighting.index(), self.surface.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorReading {
    pub detector_id: String,
    pub route: String,
    pub milepost: f64,
    pub lane: u32,
    pub timestamp: Minute,
    /// Vehicles per 30 s.
    pub flow: f64,
    /// Percent, 0–100.
    pub occupancy: f64,
    /// Miles per hour.
    pub speed: f64,
}

/// A categorical static feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryGroup {
    pub name: String,
    pub levels: Vec<String>,
}

/// Shape of the samples a model consumes: categorical groups, dynamic
/// variables and the padded length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSchema {
    pub groups: Vec<CategoryGroup>,
    pub variables: Vec<String>,
    pub t_max: usize,
}

impl WindowSchema {
    /// Four crash attributes, the fifteen detector variables, 30 steps.
    pub fn crash() -> Self {
        let group = |name: &str, levels: &[&str]| CategoryGroup {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        };
        Self {
            groups: vec![
                group("crash_type", &["rear_end", "sideswipe_angle_head_on", "obstacle", "other"]),
                group("severity", &["minor", "moderate", "severe"]),
                group("lighting", &["bright", "transitional", "dark"]),
                group("surface", &["dry", "wet", "other"]),
            ],
            variables: DYNAMIC_VARIABLES.iter().map(|s| s.to_string()).collect(),
            t_max: T_MAX,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.levels.len()).collect()
    }

    /// Width of the concatenated one-hot block.
    pub fn one_hot_width(&self) -> usize {
        self.group_sizes().iter().sum()
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }
}

/// One sample: static categories, a padded dynamic matrix with its
/// activation flags, and the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// Unique sample id.
    pub id: String,
    /// Crash the dynamic data was collected around; samples sharing it
    /// always land on the same side of a split.
    pub crash_id: String,
    /// Category index per schema group.
    pub categories: Vec<usize>,
    /// `t_max` rows of `n_vars` values; rows at or past `length` are zero.
    pub dynamic: Vec<Vec<f64>>,
    /// `data_gen_flag`: ones for active steps, zeros for padding.
    pub flags: Vec<f64>,
    pub length: usize,
    pub is_secondary: bool,
    pub time_gap_h: Option<f64>,
    pub dist_gap_mi: Option<f64>,
    /// Per-variable `(min, max)` over active steps, attached by per-variable
    /// normalization.
    pub pseudo_static: Option<Vec<(f64, f64)>>,
    pub generated: bool,
}

/// Ones-prefix activation vector of length `t_max`.
pub fn activation_flags(length: usize, t_max: usize) -> Vec<f64> {
    (0..t_max).map(|j| if j < length { 1.0 } else { 0.0 }).collect()
}

impl SampleWindow {
    /// Builds a window from the active rows, padding to `t_max`.
    pub fn from_active(
        id: impl Into<String>,
        crash_id: impl Into<String>,
        categories: Vec<usize>,
        active: Vec<Vec<f64>>,
        t_max: usize,
    ) -> Result<Self> {
        let length = active.len();
        if length == 0 || length > t_max {
            return Err(VfgError::data(format!("length {length} outside 1..={t_max}")));
        }
        let n_vars = active[0].len();
        let mut dynamic = active;
        dynamic.resize(t_max, vec![0.0; n_vars]);
        Ok(Self {
            id: id.into(),
            crash_id: crash_id.into(),
            categories,
            dynamic,
            flags: activation_flags(length, t_max),
            length,
            is_secondary: false,
            time_gap_h: None,
            dist_gap_mi: None,
            pseudo_static: None,
            generated: false,
        })
    }

    pub fn with_labels(mut self, is_secondary: bool, gaps: Option<(f64, f64)>) -> Self {
        self.is_secondary = is_secondary;
        self.time_gap_h = gaps.map(|g| g.0);
        self.dist_gap_mi = gaps.map(|g| g.1);
        self
    }

    pub fn t_max(&self) -> usize {
        self.dynamic.len()
    }

    pub fn n_vars(&self) -> usize {
        self.dynamic.first().map_or(0, Vec::len)
    }

    /// Active rows only.
    pub fn active(&self) -> &[Vec<f64>] {
        &self.dynamic[..self.length]
    }

    /// Values of one variable over the active steps.
    pub fn series(&self, var: usize) -> impl Iterator<Item = f64> + '_ {
        self.active().iter().map(move |row| row[var])
    }

    pub fn one_hot(&self, schema: &WindowSchema) -> Vec<f64> {
        let mut out = Vec::with_capacity(schema.one_hot_width());
        for (g, &c) in schema.group_sizes().iter().zip(&self.categories) {
            out.extend((0..*g).map(|i| if i == c { 1.0 } else { 0.0 }));
        }
        out
    }

    /// Checks every structural invariant against `schema`.
    pub fn validate(&self, schema: &WindowSchema) -> Result<()> {
        let bad = |msg: String| Err(VfgError::data(format!("sample {}: {msg}", self.id)));
        if self.categories.len() != schema.groups.len() {
            return bad(format!("{} categories, schema has {}", self.categories.len(), schema.groups.len()));
        }
        for (c, g) in self.categories.iter().zip(schema.group_sizes()) {
            if *c >= g {
                return bad(format!("category {c} outside group of {g}"));
            }
        }
        if self.dynamic.len() != schema.t_max || self.flags.len() != schema.t_max {
            return bad(format!("expected {} steps", schema.t_max));
        }
        if self.dynamic.iter().any(|r| r.len() != schema.n_vars()) {
            return bad(format!("expected {} variables per step", schema.n_vars()));
        }
        if self.length == 0 || self.length > schema.t_max {
            return bad(format!("length {} outside 1..={}", self.length, schema.t_max));
        }
        if self.flags != activation_flags(self.length, schema.t_max) {
            return bad("flags are not a ones-prefix matching the length".into());
        }
        if self.dynamic[self.length..].iter().flatten().any(|&v| v != 0.0) {
            return bad("non-zero value at a padded step".into());
        }
        if self.dynamic.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite dynamic value".into());
        }
        if let Some(ps) = &self.pseudo_static {
            if ps.len() != schema.n_vars() || ps.iter().any(|(lo, hi)| hi < lo) {
                return bad("pseudo-static pairs malformed".into());
            }
        }
        match (self.is_secondary, self.time_gap_h, self.dist_gap_mi) {
            (true, Some(t), Some(d)) if t >= 0.0 && d >= 0.0 => {}
            // Generated secondaries carry no gap labels.
            (true, None, None) if self.generated => {}
            (true, _, _) => return bad("secondary sample needs non-negative gaps".into()),
            (false, None, None) => {}
            (false, _, _) => return bad("gaps are only defined for secondary samples".into()),
        }
        Ok(())
    }
}
