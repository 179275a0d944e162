//! The run configuration: one JSON document with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfg::evaluate::BoxSpec;
use vfg::identify::IdentificationConfig;
use vfg::predictor::PredictorConfig;
use vfg::schema::WindowSchema;
use vfg::split::Ratio;
use vfg::synth::WorldConfig;
use vfg::vargan::GanTrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub crashes: Option<PathBuf>,
    pub detectors: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub generated: Option<PathBuf>,
    pub gan_model: Option<PathBuf>,
    pub predictor_model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    /// Directory holding a previous run, read by `report`.
    pub run_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    pub test_fraction: f64,
    /// Keep only the six pre-crash steps of every window.
    pub trimmed: bool,
    /// Target secondary : other ratio for the training set.
    pub ratio: Option<Ratio>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { test_fraction: 0.3, trimmed: false, ratio: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub count: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub boxes: Vec<BoxSpec>,
    /// Variable-name pairs for the joint-density comparison.
    pub joint_pairs: Vec<(String, String)>,
    /// Variable-name pairs for the per-step Pearson comparison.
    pub pearson_pairs: Vec<(String, String)>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let pair = |a: &str, b: &str| (a.to_owned(), b.to_owned());
        Self {
            boxes: BoxSpec::STANDARD.to_vec(),
            joint_pairs: vec![pair("Up_Avg_Spd", "Up_Avg_Occ"), pair("Down_Avg_Spd", "Down_Avg_Occ")],
            pearson_pairs: vec![pair("Up_Avg_Spd", "Down_Avg_Spd"), pair("Up_Avg_Flow", "Up_Avg_Occ")],
        }
    }
}

impl EvaluationConfig {
    /// Resolves the configured names against `schema`.
    pub fn resolve(&self, schema: &WindowSchema) -> CliResult<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        let lookup = |pairs: &[(String, String)]| -> CliResult<Vec<(usize, usize)>> {
            pairs
                .iter()
                .map(|(a, b)| {
                    let find = |n: &str| {
                        schema
                            .variable_index(n)
                            .ok_or_else(|| CliError::config(format!("evaluation: unknown variable {n:?}")))
                    };
                    Ok((find(a)?, find(b)?))
                })
                .collect()
        };
        Ok((lookup(&self.joint_pairs)?, lookup(&self.pearson_pairs)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a speed-deficit SVG for every investigated primary.
    pub contours: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub world: WorldConfig,
    /// Ratios swept after the raw baseline.
    pub ratios: Vec<Ratio>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig { days: 28, ordinary_crashes: 240, planted_pairs: 24, ..WorldConfig::default() },
            ratios: Ratio::STANDARD_SWEEP.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker-thread cap for parallel stages; all cores when absent.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub identification: IdentificationConfig,
    pub prepare: PrepareConfig,
    pub gan: GanTrainConfig,
    pub generate: GenerateConfig,
    pub predictor: PredictorConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
    pub demo: DemoConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Checks every section before any stage runs.
    pub fn validate(&self) -> CliResult<()> {
        self.identification.validate()?;
        self.gan.validate()?;
        self.predictor.validate()?;
        self.demo.world.validate()?;
        if !(self.prepare.test_fraction > 0.0 && self.prepare.test_fraction < 1.0) {
            return Err(CliError::config(format!(
                "prepare.test_fraction {} outside (0, 1)",
                self.prepare.test_fraction
            )));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be positive"));
        }
        for b in &self.evaluation.boxes {
            BoxSpec::new(b.time_h, b.dist_mi)?;
        }
        self.evaluation.resolve(&WindowSchema::crash())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring paths and the thread
    /// cap (neither affects results).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        canonical.threads = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn require(path: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.clone().ok_or_else(|| {
        CliError::config(format!("missing --{flag} (or paths.{} in the config)", flag.replace('-', "_")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"gan": {"epochz": 2}}"#).is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
    }
}
