//! Content-addressed response cache.
//!
//! One immutable JSON file per entry, named by the request digest. Writers
//! go through a temp-file rename so concurrent readers never observe a
//! partial entry; the first write wins and later identical writes are
//! no-ops.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt cache entry {path}: {message}")]
    Corrupt { path: String, message: String },
}

/// A cached response keyed by the digest of the request that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub value: serde_json::Value,
    pub created_at: String,
}

/// Directory-backed cache with concurrent readers and atomic single-writer
/// appends.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<ResponseCache, CacheError> {
        std::fs::create_dir_all(dir).map_err(|e| CacheError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Digest of `(endpoint, model, messages, params, seed)`.
    pub fn request_key(
        endpoint: &str,
        model: &str,
        messages: &serde_json::Value,
        params: &serde_json::Value,
        seed: u64,
    ) -> String {
        let mut hasher = Sha256::new();
        for part in [
            endpoint.as_bytes(),
            model.as_bytes(),
            messages.to_string().as_bytes(),
            params.to_string().as_bytes(),
            &seed.to_le_bytes(),
        ] {
            hasher.update(part);
            hasher.update([0xff]);
        }
        hex::encode(hasher.finalize())
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(CacheError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        let entry = serde_json::from_slice(&bytes).map_err(|e| CacheError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Some(entry))
    }

    /// Stores a response. Entries are immutable: if the key already exists
    /// the stored entry is returned unchanged.
    pub fn put(&self, key: &str, value: serde_json::Value) -> Result<CacheEntry, CacheError> {
        if let Some(existing) = self.get(key)? {
            return Ok(existing);
        }
        let entry = CacheEntry {
            key: key.to_string(),
            value,
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = self.entry_path(key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let bytes = serde_json::to_vec(&entry).expect("serializable entry");
        std::fs::write(&tmp, bytes).map_err(|e| CacheError::Io {
            path: tmp.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::rename(&tmp, &path).map_err(|e| CacheError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(entry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_immutability() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = ResponseCache::request_key(
            "http://x",
            "m",
            &serde_json::json!([{"role": "user", "content": "hi"}]),
            &serde_json::json!({"temperature": 0.5}),
            7,
        );
        assert!(cache.get(&key).unwrap().is_none());
        let first = cache.put(&key, serde_json::json!({"text": "one"})).unwrap();
        let second = cache.put(&key, serde_json::json!({"text": "two"})).unwrap();
        assert_eq!(first.value, second.value);
        assert_eq!(
            cache.get(&key).unwrap().unwrap().value,
            serde_json::json!({"text": "one"})
        );
    }

    #[test]
    fn keys_differ_when_any_component_differs() {
        let messages = serde_json::json!([]);
        let params = serde_json::json!({});
        let base = ResponseCache::request_key("e", "m", &messages, &params, 1);
        assert_ne!(base, ResponseCache::request_key("e2", "m", &messages, &params, 1));
        assert_ne!(base, ResponseCache::request_key("e", "m2", &messages, &params, 1));
        assert_ne!(base, ResponseCache::request_key("e", "m", &messages, &params, 2));
    }
}
