//! Content-addressed response cache.
//!
//! On disk a value lives at `<root>/<kind>/<two-hex-prefix>/<key-digest>`,
//! where the digest is the SHA-256 of the key fields joined with `:`.
//! Values are raw bytes: UTF-8 for captions, the [`EmbeddingVector`] byte
//! layout for embeddings, JSON for detections. Writes go through a temporary
//! file and a rename so readers never see a partial value; concurrent writers
//! of the same key race and the last rename wins.
//!
//! [`EmbeddingVector`]: super::EmbeddingVector

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheKind {
    Caption,
    Embedding,
    Detection,
}

impl CacheKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CacheKind::Caption => "caption",
            CacheKind::Embedding => "embedding",
            CacheKind::Detection => "detection",
        }
    }
}

impl fmt::Display for CacheKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub content_hash: String,
    /// Empty for embeddings and detections.
    pub prompt_hash: String,
    pub model_name: String,
    pub kind: CacheKind,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        sha256_hex(format!(
            "{}:{}:{}:{}",
            self.content_hash, self.prompt_hash, self.model_name, self.kind
        ))
    }
}

pub trait ResponseCache: Send + Sync {
    fn get(&self, key: &CacheKey) -> io::Result<Option<Vec<u8>>>;
    fn put(&self, key: &CacheKey, value: &[u8]) -> io::Result<()>;
}

/// Returns the cached value for `key`, or runs `compute` and stores its
/// result. Errors from `compute` are returned and nothing is stored.
pub fn lookup_or_compute<E>(
    cache: &dyn ResponseCache,
    key: &CacheKey,
    compute: impl FnOnce() -> Result<Vec<u8>, E>,
) -> Result<Vec<u8>, E>
where
    E: From<io::Error>,
{
    if let Some(hit) = cache.get(key)? {
        return Ok(hit);
    }
    let value = compute()?;
    cache.put(key, &value)?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let digest = key.digest();
        self.root.join(key.kind.as_str()).join(&digest[..2]).join(digest)
    }
}

impl ResponseCache for DiskCache {
    fn get(&self, key: &CacheKey) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path_for(key)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(err) if err.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(err) => Err(err),
        }
    }

    fn put(&self, key: &CacheKey, value: &[u8]) -> io::Result<()> {
        crate::ingest::write_atomic(&self.path_for(key), value)
    }
}

/// In-process cache, mainly for tests and one-shot runs.
#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<CacheKey, Vec<u8>>>,
}

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn get(&self, key: &CacheKey) -> io::Result<Option<Vec<u8>>> {
        Ok(self.entries.lock().expect("cache poisoned").get(key).cloned())
    }

    fn put(&self, key: &CacheKey, value: &[u8]) -> io::Result<()> {
        self.entries.lock().expect("cache poisoned").insert(key.clone(), value.to_vec());
        Ok(())
    }
}
