//! Content-addressed store of verbatim provider responses.
//!
//! Layout: `{dir}/{key[0..2]}/{key}.json`, where the key is the SHA-256 of the
//! canonical JSON of everything that determines the response. Credentials are
//! never part of the key material.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    /// `request` is the exact JSON body sent to the provider; `kind` names the
    /// endpoint family (e.g. `completion`, `embedding`).
    pub fn new(base_url: &str, model: &str, kind: &str, request: &Value) -> Self {
        // serde_json maps are ordered by key, so this serialization is canonical.
        let material = json!({
            "base_url": base_url.trim_end_matches('/'),
            "model": model,
            "kind": kind,
            "request": request,
        });
        let digest = Sha256::digest(material.to_string().as_bytes());
        Self(hex::encode(digest))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(&key.0[..2]).join(format!("{}.json", key.0))
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        fs::read_to_string(self.path_for(key)).ok()
    }

    pub fn put(&self, key: &CacheKey, body: &str) -> io::Result<()> {
        let path = self.path_for(key);
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &path)
    }
}
