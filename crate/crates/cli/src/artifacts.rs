//! Stage manifests and checksum-verified artifact access.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use skt_hang_core::PIPELINE_VERSION;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub pipeline_version: u32,
    pub config_digest: String,
    pub seed: u64,
    /// Path relative to the stage root mapped to its SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(root: &Path, stage: &str) -> PathBuf {
    root.join(format!("{stage}.manifest.json"))
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serialises");
    v.push(b'\n');
    v
}

fn read_manifest(root: &Path, stage: &str) -> Result<Option<Manifest>, CliError> {
    let path = manifest_path(root, stage);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| CliError::StaleArtifact {
            artifact: path.display().to_string(),
            expected: "a stage manifest".into(),
            found: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::io(path.display(), e)),
    }
}

/// True when `stage` under `root` was produced with `digest` and every listed
/// file still has its recorded checksum.
pub fn up_to_date(root: &Path, stage: &str, digest: &str) -> bool {
    let Ok(Some(m)) = read_manifest(root, stage) else {
        return false;
    };
    m.pipeline_version == PIPELINE_VERSION
        && m.config_digest == digest
        && m.files.iter().all(|(rel, sum)| std::fs::read(root.join(rel)).is_ok_and(|b| sha256_hex(&b) == *sum))
}

/// Collects a stage's outputs and records them in its manifest.
pub struct StageWriter {
    root: PathBuf,
    stage: String,
    digest: String,
    seed: u64,
    files: BTreeMap<String, String>,
}

impl StageWriter {
    /// Removes any previous manifest first, so an interrupted run is never
    /// mistaken for a complete one.
    pub fn begin(root: &Path, stage: &str, digest: &str, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root.display(), e))?;
        let mpath = manifest_path(root, stage);
        if mpath.exists() {
            std::fs::remove_file(&mpath).map_err(|e| CliError::io(mpath.display(), e))?;
        }
        Ok(StageWriter {
            root: root.to_path_buf(),
            stage: stage.to_string(),
            digest: digest.to_string(),
            seed,
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(&self.root.join(rel), bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        self.write_bytes(rel, &json_bytes(value))
    }

    /// Writes a file that is deliberately left out of the manifest.
    pub fn write_unlisted(&self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(&self.root.join(rel), bytes)
    }

    pub fn finish(self) -> Result<Manifest, CliError> {
        let m = Manifest {
            stage: self.stage,
            pipeline_version: PIPELINE_VERSION,
            config_digest: self.digest,
            seed: self.seed,
            files: self.files,
        };
        write_file(&manifest_path(&self.root, &m.stage), &json_bytes(&m))?;
        Ok(m)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

/// Read access to a finished upstream stage.
#[derive(Debug, Clone)]
pub struct StageReader {
    root: PathBuf,
    pub manifest: Manifest,
}

impl StageReader {
    /// Opens `stage`, requiring the current pipeline version and `digest`.
    pub fn open(root: &Path, stage: &str, digest: &str) -> Result<Self, CliError> {
        let manifest = read_manifest(root, stage)?.ok_or_else(|| CliError::MissingArtifact(manifest_path(root, stage).display().to_string()))?;
        let artifact = manifest_path(root, stage).display().to_string();
        if manifest.pipeline_version != PIPELINE_VERSION {
            return Err(CliError::StaleArtifact {
                artifact,
                expected: format!("pipeline version {PIPELINE_VERSION}"),
                found: format!("pipeline version {}", manifest.pipeline_version),
            });
        }
        if manifest.config_digest != digest {
            return Err(CliError::StaleArtifact {
                artifact,
                expected: format!("config digest {digest}"),
                found: format!("config digest {}", manifest.config_digest),
            });
        }
        Ok(StageReader {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.manifest.files.contains_key(rel)
    }

    /// Reads `rel`, checking it against the manifest checksum.
    pub fn read_bytes(&self, rel: &str) -> Result<Vec<u8>, CliError> {
        let path = self.root.join(rel);
        let expected = self
            .manifest
            .files
            .get(rel)
            .ok_or_else(|| CliError::MissingArtifact(format!("{} (not listed in the {} manifest)", path.display(), self.manifest.stage)))?;
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(path.display(), e))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(CliError::StaleArtifact {
                artifact: path.display().to_string(),
                expected: format!("sha256 {expected}"),
                found: format!("sha256 {found}"),
            });
        }
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T, CliError> {
        let bytes = self.read_bytes(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Pipeline(format!("{}: {e}", self.root.join(rel).display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = StageWriter::begin(dir.path(), "demo", "abc", 7).unwrap();
        w.write_json("a/b.json", &vec![1, 2, 3]).unwrap();
        w.finish().unwrap();
        assert!(up_to_date(dir.path(), "demo", "abc"));
        assert!(!up_to_date(dir.path(), "demo", "abd"));

        let r = StageReader::open(dir.path(), "demo", "abc").unwrap();
        assert_eq!(r.read_json::<Vec<i32>>("a/b.json").unwrap(), vec![1, 2, 3]);
        assert!(matches!(r.read_bytes("missing.json"), Err(CliError::MissingArtifact(_))));
        assert!(matches!(StageReader::open(dir.path(), "demo", "zzz"), Err(CliError::StaleArtifact { .. })));
        assert!(matches!(StageReader::open(dir.path(), "other", "abc"), Err(CliError::MissingArtifact(_))));

        std::fs::write(dir.path().join("a/b.json"), b"[1,2,4]").unwrap();
        assert!(matches!(r.read_bytes("a/b.json"), Err(CliError::StaleArtifact { .. })));
        assert!(!up_to_date(dir.path(), "demo", "abc"));
    }
}
