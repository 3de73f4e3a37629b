//! Per-stage manifests recording the hashes of a stage's configuration,
//! inputs and outputs. A stage refuses to run when an upstream manifest is
//! missing, an upstream file no longer matches its recorded hash, or the
//! upstream stage ran with a different configuration than the current one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read, read_json, write_json, PipelineError, Result};

pub const MANIFEST_FORMAT: &str = "bakedsdf-manifest/1";
pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRecord {
    /// Path relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub stage: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("configs serialize"))
}

pub fn manifest_path(root: &Path, stage: &str) -> PathBuf {
    root.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

pub fn file_record(root: &Path, path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: relative(root, path),
        sha256: sha256_hex(&read(path)?),
    })
}

impl Manifest {
    /// Hashes `inputs` and `outputs` (absolute or root-relative paths).
    pub fn build(root: &Path, stage: &str, config_sha256: String, seed: u64, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self> {
        let full = |p: &PathBuf| if p.starts_with(root) { p.clone() } else { root.join(p) };
        let records = |paths: &[PathBuf]| paths.iter().map(|p| file_record(root, &full(p))).collect::<Result<Vec<_>>>();
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            stage: stage.into(),
            config_sha256,
            seed,
            inputs: records(inputs)?,
            outputs: records(outputs)?,
        })
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&manifest_path(root, &self.stage), self)
    }

    pub fn load(root: &Path, stage: &str) -> Result<Self> {
        let path = manifest_path(root, stage);
        if !path.exists() {
            return Err(PipelineError::Missing { path, stage: stage.into() });
        }
        let m: Manifest = read_json(&path)?;
        if m.format != MANIFEST_FORMAT || m.stage != stage {
            return Err(PipelineError::Stale {
                path,
                message: format!("expected a {MANIFEST_FORMAT} manifest for stage {stage}"),
            });
        }
        Ok(m)
    }
}

/// Checks that `stage` completed with configuration hash `expected_config`,
/// that every output it recorded is still on disk unchanged, and that its
/// own inputs have not been regenerated since.
pub fn verify_upstream(root: &Path, stage: &str, expected_config: &str) -> Result<Manifest> {
    let m = Manifest::load(root, stage)?;
    let mpath = manifest_path(root, stage);
    if m.config_sha256 != expected_config {
        return Err(PipelineError::Stale {
            path: mpath,
            message: format!("stage {stage} ran with a different configuration; rerun `{stage}`"),
        });
    }
    for rec in &m.outputs {
        let path = root.join(&rec.path);
        if !path.exists() {
            return Err(PipelineError::Missing { path, stage: stage.into() });
        }
        let actual = sha256_hex(&read(&path)?);
        if actual != rec.sha256 {
            return Err(PipelineError::Stale {
                path,
                message: format!("content hash {actual} does not match the {stage} manifest ({})", rec.sha256),
            });
        }
    }
    for rec in &m.inputs {
        let path = root.join(&rec.path);
        let current = if path.exists() { Some(sha256_hex(&read(&path)?)) } else { None };
        if current.as_deref() != Some(rec.sha256.as_str()) {
            return Err(PipelineError::Stale {
                path,
                message: format!("input changed after stage {stage} ran; rerun `{stage}`"),
            });
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.bin"), b"alpha").unwrap();
        std::fs::create_dir_all(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.bin"), b"beta").unwrap();
        let m = Manifest::build(dir.path(), "train", "cfg".into(), 7, &[], &["a.bin".into(), dir.path().join("sub/b.bin")]).unwrap();
        m.save(dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn round_trip_and_verify() {
        let (dir, m) = setup();
        assert_eq!(m.outputs[1].path, "sub/b.bin");
        assert_eq!(verify_upstream(dir.path(), "train", "cfg").unwrap(), m);
    }

    #[test]
    fn detects_modified_output() {
        let (dir, _) = setup();
        std::fs::write(dir.path().join("a.bin"), b"alpha!").unwrap();
        assert!(matches!(verify_upstream(dir.path(), "train", "cfg"), Err(PipelineError::Stale { .. })));
    }

    #[test]
    fn detects_config_change_and_missing_manifest() {
        let (dir, _) = setup();
        assert!(matches!(verify_upstream(dir.path(), "train", "other"), Err(PipelineError::Stale { .. })));
        assert!(matches!(verify_upstream(dir.path(), "bake", "cfg"), Err(PipelineError::Missing { .. })));
        std::fs::remove_file(dir.path().join("sub/b.bin")).unwrap();
        assert!(matches!(verify_upstream(dir.path(), "train", "cfg"), Err(PipelineError::Missing { .. })));
    }

    #[test]
    fn detects_regenerated_input() {
        let (dir, _) = setup();
        let m = Manifest::build(dir.path(), "bake", "b".into(), 7, &["a.bin".into()], &["sub/b.bin".into()]).unwrap();
        m.save(dir.path()).unwrap();
        assert!(verify_upstream(dir.path(), "bake", "b").is_ok());
        std::fs::write(dir.path().join("a.bin"), b"new model").unwrap();
        assert!(matches!(verify_upstream(dir.path(), "bake", "b"), Err(PipelineError::Stale { .. })));
    }

    #[test]
    fn detects_tampered_manifest() {
        let (dir, _) = setup();
        let path = manifest_path(dir.path(), "train");
        let text = std::fs::read_to_string(&path).unwrap().replace(&sha256_hex(b"alpha"), &sha256_hex(b"gamma"));
        std::fs::write(&path, text).unwrap();
        assert!(matches!(verify_upstream(dir.path(), "train", "cfg"), Err(PipelineError::Stale { .. })));
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(verify_upstream(dir.path(), "train", "cfg"), Err(PipelineError::Format { .. })));
    }
}
