//! Output staging, quarantine of partial outputs, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";
pub const QUARANTINE: &str = "quarantine";
const STAGING_PREFIX: &str = ".staging-";

/// A scratch directory inside the output directory. Outputs are written
/// here and moved into place only when the stage succeeds.
#[derive(Debug)]
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    stage: String,
}

impl Staging {
    pub fn new(out: &Path, stage: &str) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let dir = out.join(format!("{STAGING_PREFIX}{stage}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { out: out.to_owned(), dir, stage: stage.to_owned() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Moves every staged file into the output directory, replacing older
    /// versions.
    pub fn commit(self) -> CliResult<()> {
        for rel in list_files(&self.dir)? {
            let target = self.out.join(&rel);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::rename(self.dir.join(&rel), target)?;
        }
        fs::remove_dir_all(&self.dir)?;
        Ok(())
    }

    /// Moves the staged files to `quarantine/<stage>[-n]` and returns that
    /// directory.
    pub fn quarantine(self) -> CliResult<PathBuf> {
        let root = self.out.join(QUARANTINE);
        fs::create_dir_all(&root)?;
        let mut target = root.join(&self.stage);
        let mut n = 1;
        while target.exists() {
            n += 1;
            target = root.join(format!("{}-{n}", self.stage));
        }
        fs::rename(&self.dir, &target)?;
        Ok(target)
    }
}

/// Files under `root`, relative, sorted, with `/` separators.
pub fn list_files(root: &Path) -> CliResult<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walked from root");
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut hasher = Sha256::new();
    let mut file = fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        match file.read(&mut buf)? {
            0 => break,
            n => hasher.update(&buf[..n]),
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to check a run: which config and seed produced which
/// files. Timings live in a separate file so the manifest is reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

fn is_bookkeeping(rel: &str) -> bool {
    rel == MANIFEST || rel == TIMINGS || rel.starts_with(&format!("{QUARANTINE}/")) || rel.starts_with(STAGING_PREFIX)
}

/// Rewrites `manifest.json` and `timings.json` in `out` after `stage` ran,
/// keeping stages recorded by earlier commands in the same directory.
pub fn update_manifest(out: &Path, config_hash: &str, seed: u64, stage: &str, seconds: f64) -> CliResult<Manifest> {
    let previous: Option<Manifest> =
        fs::read(out.join(MANIFEST)).ok().and_then(|bytes| serde_json::from_slice(&bytes).ok());
    let mut stages = previous.map(|m| m.stages).unwrap_or_default();
    if !stages.iter().any(|s| s == stage) {
        stages.push(stage.to_owned());
    }
    let mut artifacts = Vec::new();
    for rel in list_files(out)? {
        if is_bookkeeping(&rel) {
            continue;
        }
        let path = out.join(&rel);
        artifacts.push(Artifact { sha256: sha256_file(&path)?, bytes: fs::metadata(&path)?.len(), path: rel });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: config_hash.to_owned(),
        seed,
        stages,
        artifacts,
    };
    write_json(&out.join(MANIFEST), &manifest)?;

    let mut timings: BTreeMap<String, f64> =
        fs::read(out.join(TIMINGS)).ok().and_then(|bytes| serde_json::from_slice(&bytes).ok()).unwrap_or_default();
    timings.insert(stage.to_owned(), seconds);
    write_json(&out.join(TIMINGS), &timings)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(vfg::VfgError::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}
