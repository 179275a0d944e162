//! Stratified train/test splitting and ratio rebalancing with generated
//! secondaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::schema::SampleWindow;

/// Target secondary : non-secondary ratio, e.g. `1:4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub secondary: u32,
    pub other: u32,
}

impl Ratio {
    pub const STANDARD_SWEEP: [Ratio; 4] = [
        Ratio { secondary: 1, other: 4 },
        Ratio { secondary: 1, other: 3 },
        Ratio { secondary: 1, other: 2 },
        Ratio { secondary: 1, other: 1 },
    ];

    pub fn new(secondary: u32, other: u32) -> Result<Self> {
        if secondary == 0 || other == 0 {
            return Err(VfgError::config(format!("ratio {secondary}:{other} must have positive terms")));
        }
        Ok(Self { secondary, other })
    }

    /// Generated secondaries needed so that `positives : negatives` reaches
    /// this ratio: `ceil(negatives * secondary / other) - positives`, or 0
    /// when the ratio is already met.
    pub fn required(&self, positives: usize, negatives: usize) -> usize {
        let num = negatives as u64 * self.secondary as u64;
        let target = num.div_ceil(self.other as u64) as usize;
        target.saturating_sub(positives)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.secondary, self.other)
    }
}

impl FromStr for Ratio {
    type Err = VfgError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) =
            s.split_once(':').ok_or_else(|| VfgError::config(format!("ratio {s:?} is not of the form a:b")))?;
        let parse = |t: &str| {
            t.trim().parse::<u32>().map_err(|_| VfgError::config(format!("ratio {s:?} has a non-integer term")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

impl TryFrom<String> for Ratio {
    type Error = VfgError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    pub ratio: Option<Ratio>,
}

impl DatasetSplit {
    pub fn train_counts(&self) -> (usize, usize) {
        counts(&self.train)
    }

    pub fn test_counts(&self) -> (usize, usize) {
        counts(&self.test)
    }
}

/// (secondary, non-secondary) counts.
pub fn counts(samples: &[SampleWindow]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.is_secondary).count();
    (pos, samples.len() - pos)
}

/// Stratified random split keeping every crash id on one side. Groups are
/// stratified by whether they contain a secondary sample; each stratum sends
/// groups to the test side until it holds `round(fraction * n)` samples.
pub fn stratified_split(
    samples: &[SampleWindow],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleWindow>, Vec<SampleWindow>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(VfgError::config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    if let Some(g) = samples.iter().find(|s| s.generated) {
        return Err(VfgError::data(format!("generated sample {} in the real corpus", g.id)));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.crash_id.as_str()).or_default().push(i);
    }
    let (mut pos, mut neg): (Vec<_>, Vec<_>) =
        groups.into_values().partition(|idx| idx.iter().any(|&i| samples[i].is_secondary));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = BTreeSet::new();
    for stratum in [&mut pos, &mut neg] {
        stratum.shuffle(&mut rng);
        let total: usize = stratum.iter().map(Vec::len).sum();
        let want = (total as f64 * test_fraction).round() as usize;
        let mut taken = 0;
        for group in stratum.iter() {
            if taken >= want {
                break;
            }
            taken += group.len();
            test_idx.extend(group.iter().copied());
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if test_idx.contains(&i) { &mut test } else { &mut train }.push(s.clone());
    }
    Ok((train, test))
}

/// Appends exactly as many generated secondaries as `ratio` requires.
pub fn balance(train: &[SampleWindow], ratio: Ratio, generated: &[SampleWindow]) -> Result<Vec<SampleWindow>> {
    if let Some(g) = generated.iter().find(|s| !s.is_secondary) {
        return Err(VfgError::data(format!("generated sample {} is not labeled secondary", g.id)));
    }
    let (pos, neg) = counts(train);
    let required = ratio.required(pos, neg);
    if generated.len() < required {
        return Err(VfgError::InsufficientGenerated { required, available: generated.len() });
    }
    let mut out = train.to_vec();
    out.extend(generated[..required].iter().cloned().map(|mut s| {
        s.generated = true;
        s
    }));
    Ok(out)
}

/// Splits the real corpus 7:3 (or `test_fraction`) and optionally rebalances
/// the training side to `ratio` with generated secondaries.
pub fn split_and_balance(
    samples: &[SampleWindow],
    test_fraction: f64,
    ratio: Option<Ratio>,
    generated: &[SampleWindow],
    seed: u64,
) -> Result<DatasetSplit> {
    let (train, test) = stratified_split(samples, test_fraction, seed)?;
    let train = match ratio {
        Some(r) => balance(&train, r, generated)?,
        None => train,
    };
    Ok(DatasetSplit { train, test, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::T_MAX;

    fn corpus(pos: usize, neg: usize) -> Vec<SampleWindow> {
        (0..pos + neg)
            .map(|i| {
                SampleWindow::from_active(format!("s{i}"), format!("c{i}"), vec![0; 4], vec![vec![1.0; 15]; 6], T_MAX)
                    .unwrap()
                    .with_labels(i < pos, (i < pos).then_some((0.5, 0.5)))
            })
            .collect()
    }

    #[test]
    fn reference_split_counts() {
        let s = corpus(156, 9220);
        let (train, test) = stratified_split(&s, 0.3, 7).unwrap();
        assert_eq!(counts(&train), (109, 6454));
        assert_eq!(counts(&test), (47, 2766));
    }

    #[test]
    fn reference_required_counts() {
        assert_eq!(Ratio::new(1, 1).unwrap().required(109, 6454), 6345);
        assert_eq!(Ratio::new(1, 2).unwrap().required(109, 6454), 3118);
        assert_eq!(Ratio::new(1, 4).unwrap().required(5000, 6454), 0);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1:4".parse::<Ratio>().unwrap(), Ratio { secondary: 1, other: 4 });
        assert!("1-4".parse::<Ratio>().is_err());
        assert!("0:4".parse::<Ratio>().is_err());
        assert!("a:4".parse::<Ratio>().is_err());
    }

    #[test]
    fn balance_rejects_shortfall_with_count() {
        let train = corpus(2, 10);
        let generated: Vec<SampleWindow> = corpus(3, 0);
        match balance(&train, Ratio::new(1, 1).unwrap(), &generated) {
            Err(VfgError::InsufficientGenerated { required, available }) => assert_eq!((required, available), (8, 3)),
            other => panic!("unexpected {other:?}"),
        }
        let out = balance(&train, Ratio::new(1, 4).unwrap(), &generated).unwrap();
        assert_eq!(counts(&out), (3, 10));
        assert!(out.last().unwrap().generated);
    }

    #[test]
    fn groups_stay_together() {
        let mut s = corpus(4, 30);
        for (i, w) in s.iter_mut().enumerate() {
            w.crash_id = format!("g{}", i / 2);
        }
        let (train, test) = stratified_split(&s, 0.3, 1).unwrap();
        let a: BTreeSet<_> = train.iter().map(|w| &w.crash_id).collect();
        assert!(test.iter().all(|w| !a.contains(&w.crash_id)));
    }
}
