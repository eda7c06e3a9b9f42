//! Run manifests: every artifact a command writes, with digests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("artifact {path} digest mismatch: manifest {expected}, file {actual}")]
    DigestMismatch {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("artifact {0} listed in manifest but missing on disk")]
    Missing(String),
    #[error("file {0} present in output directory but not listed in manifest")]
    Unlisted(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub schema: String,
}

/// Record of one command invocation: configuration digests, seeds, schema
/// versions, artifacts, and failures.
///
/// `created_at` is the only field that varies between identical re-runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
    pub global_seed: u64,
    pub created_at: String,
    pub artifacts: Vec<ArtifactEntry>,
    #[serde(default)]
    pub failed_items: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: &str, global_seed: u64) -> RunManifest {
        RunManifest {
            schema: "manifest/1".to_string(),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            dataset_digest: None,
            global_seed,
            created_at: chrono::Utc::now().to_rfc3339(),
            artifacts: Vec::new(),
            failed_items: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn record_artifact(&mut self, relative_path: &str, schema: &str, bytes: &[u8]) {
        self.artifacts.push(ArtifactEntry {
            path: relative_path.to_string(),
            sha256: sha256_hex(bytes),
            schema: schema.to_string(),
        });
    }

    pub fn write(&self, output_dir: &Path) -> Result<(), ManifestError> {
        let path = output_dir.join(MANIFEST_FILE);
        let bytes = serde_json::to_vec_pretty(self).expect("serializable manifest");
        std::fs::write(&path, bytes).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(output_dir: &Path) -> Result<RunManifest, ManifestError> {
        let path = output_dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ManifestError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Checks completeness both ways: every listed artifact exists with the
    /// recorded digest, and every file in the directory (except the manifest
    /// itself) is listed.
    pub fn verify(&self, output_dir: &Path) -> Result<(), ManifestError> {
        for artifact in &self.artifacts {
            let path = output_dir.join(&artifact.path);
            let bytes =
                std::fs::read(&path).map_err(|_| ManifestError::Missing(artifact.path.clone()))?;
            let actual = sha256_hex(&bytes);
            if actual != artifact.sha256 {
                return Err(ManifestError::DigestMismatch {
                    path: artifact.path.clone(),
                    expected: artifact.sha256.clone(),
                    actual,
                });
            }
        }
        let listed: std::collections::BTreeSet<&str> =
            self.artifacts.iter().map(|a| a.path.as_str()).collect();
        for entry in walk_files(output_dir).map_err(|e| ManifestError::Io {
            path: output_dir.display().to_string(),
            message: e.to_string(),
        })? {
            let rel = entry
                .strip_prefix(output_dir)
                .unwrap_or(&entry)
                .to_string_lossy()
                .replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            if !listed.contains(rel.as_str()) {
                return Err(ManifestError::Unlisted(rel));
            }
        }
        Ok(())
    }
}

fn walk_files(dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}
