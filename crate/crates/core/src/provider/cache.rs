use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{GenerationRequest, Provider, ProviderError, ProviderSpec};
use crate::rng::content_hash;

/// One cached reply. Stored as `<root>/<key[0..2]>/<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub provider: String,
    pub temperature: f64,
    pub draw_index: u64,
    pub prompt: String,
    pub reply: String,
    pub created_unix: u64,
}

/// Content-addressed reply store. Writes go through a temp file and an
/// atomic rename so concurrent writers never expose partial entries.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(spec: &ProviderSpec, request: &GenerationRequest) -> String {
        content_hash([
            spec.name.as_bytes(),
            spec.temperature.to_bits().to_le_bytes().as_slice(),
            request.prompt.as_bytes(),
            request.draw_index.to_le_bytes().as_slice(),
        ])
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path_for(key)).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.key == key => Some(entry),
            _ => {
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, entry)?;
        tmp.write_all(b"\n")?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

pub struct CachedProvider<P> {
    inner: P,
    cache: ResponseCache,
}

impl<P: Provider> CachedProvider<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }
}

impl<P: Provider> Provider for CachedProvider<P> {
    fn spec(&self) -> &ProviderSpec {
        self.inner.spec()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let key = ResponseCache::key(self.spec(), request);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.reply);
        }
        let reply = self.inner.generate(request)?;
        let entry = CacheEntry {
            key,
            provider: self.spec().name.clone(),
            temperature: self.spec().temperature,
            draw_index: request.draw_index,
            prompt: request.prompt.clone(),
            reply: reply.clone(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Err(err) = self.cache.put(&entry) {
            log::warn!("could not write cache entry: {err}");
        }
        Ok(reply)
    }
}
