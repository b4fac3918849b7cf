use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const REPORTS_FILE: &str = "reports.json";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const ABLATION_FILE: &str = "ablation.json";
pub const TRAIN_MATRIX_FILE: &str = "features_train.txt";
pub const TEST_MATRIX_FILE: &str = "features_test.txt";
const LOCK_FILE: &str = ".sentivote.lock";

const MANIFEST_FORMAT: &str = "sentivote.manifest";
const MANIFEST_VERSION: u32 = 1;

pub fn model_file(model_id: &str) -> String {
    format!("model_{model_id}.json")
}

pub fn probability_file(model_id: &str) -> String {
    format!("probs_{model_id}.jsonl")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Canonical ids on each side of the split, ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub sentivote: String,
    pub manifest: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            sentivote: env!("CARGO_PKG_VERSION").into(),
            manifest: MANIFEST_VERSION,
        }
    }
}

/// Record of one run: the effective config, the split, and a content hash
/// for every file the run produced. Artifact keys are file names relative to
/// the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: RunConfig,
    pub split: SplitIds,
    pub vocabulary_hash: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub timings: Vec<StageTiming>,
    pub versions: Versions,
}

impl RunManifest {
    pub fn new(config: RunConfig, split: SplitIds, vocabulary_hash: String) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            config,
            split,
            vocabulary_hash,
            artifacts: BTreeMap::new(),
            timings: Vec::new(),
            versions: Versions::default(),
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.is_file() {
            return Err(Error::InvalidInput(format!(
                "no run manifest at {}; run `sentivote train` with this output directory first",
                path.display()
            )));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Integrity {
                path: path.clone(),
                message: format!("not a readable run manifest: {e}"),
            })?;
        if manifest.format != MANIFEST_FORMAT || manifest.versions.manifest != MANIFEST_VERSION {
            return Err(Error::Integrity {
                path,
                message: format!(
                    "unsupported manifest {} v{}",
                    manifest.format, manifest.versions.manifest
                ),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let mut bytes =
            serde_json::to_vec_pretty(self).map_err(|e| Error::json("run manifest", e))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Hashes `dir/name` and lists it.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let sha256 = sha256_file(&path)?;
        self.artifacts.insert(name.to_string(), ArtifactEntry { sha256, bytes });
        Ok(())
    }

    /// Fails with an integrity error naming the file when `dir/name` is
    /// missing, unlisted or altered.
    pub fn verify(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        let entry = self.artifacts.get(name).ok_or_else(|| Error::Integrity {
            path: path.clone(),
            message: "not listed in the run manifest".into(),
        })?;
        if !path.is_file() {
            return Err(Error::Integrity {
                path,
                message: "listed in the run manifest but missing".into(),
            });
        }
        let actual = sha256_file(&path)?;
        if actual != entry.sha256 {
            return Err(Error::Integrity {
                path,
                message: format!(
                    "content hash {actual} does not match the manifest ({})",
                    entry.sha256
                ),
            });
        }
        Ok(path)
    }

    pub fn verify_all(&self, dir: &Path) -> Result<()> {
        for name in self.artifacts.keys() {
            self.verify(dir, name)?;
        }
        Ok(())
    }

    /// Keeps entries of `previous` that describe the same split and
    /// vocabulary and whose files are still intact, without overriding
    /// entries already recorded here.
    pub fn carry_over(&mut self, dir: &Path, previous: &RunManifest) {
        if previous.split != self.split || previous.vocabulary_hash != self.vocabulary_hash {
            return;
        }
        for (name, entry) in &previous.artifacts {
            if !self.artifacts.contains_key(name) && previous.verify(dir, name).is_ok() {
                self.artifacts.insert(name.clone(), entry.clone());
            }
        }
    }
}

/// Exclusive claim on an output directory for the lifetime of the value.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::InvalidInput(format!(
                    "output directory {} is in use by another run; delete {} if no run is active",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_verify_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.json"), b"{}").unwrap();
        let mut m = RunManifest::new(RunConfig::default(), SplitIds::default(), "h".into());
        m.record(dir.path(), "a.json").unwrap();
        assert_eq!(m.artifacts["a.json"].bytes, 2);
        m.save(dir.path()).unwrap();
        let loaded = RunManifest::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
        loaded.verify_all(dir.path()).unwrap();

        std::fs::write(dir.path().join("a.json"), b"{ }").unwrap();
        let err = loaded.verify(dir.path(), "a.json").unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
        assert!(err.to_string().contains("a.json"));
        assert!(loaded.verify(dir.path(), "b.json").is_err());
    }

    #[test]
    fn missing_manifest_hints_at_training() {
        let dir = tempfile::tempdir().unwrap();
        let err = RunManifest::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("sentivote train"));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn carry_over_keeps_only_matching_intact_entries() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.txt"), b"x").unwrap();
        std::fs::write(dir.path().join("y.txt"), b"y").unwrap();
        let mut old = RunManifest::new(RunConfig::default(), SplitIds::default(), "h".into());
        old.record(dir.path(), "x.txt").unwrap();
        old.record(dir.path(), "y.txt").unwrap();
        std::fs::write(dir.path().join("y.txt"), b"changed").unwrap();

        let mut new = RunManifest::new(RunConfig::default(), SplitIds::default(), "h".into());
        new.carry_over(dir.path(), &old);
        assert!(new.artifacts.contains_key("x.txt"));
        assert!(!new.artifacts.contains_key("y.txt"));

        let mut other = RunManifest::new(RunConfig::default(), SplitIds::default(), "other".into());
        other.carry_over(dir.path(), &old);
        assert!(other.artifacts.is_empty());
    }
}
