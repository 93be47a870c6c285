use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TaxonomyError;
use crate::rng::content_hash;

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f64>, TaxonomyError>;

    /// Embeds a batch; the default runs items in parallel.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TaxonomyError> {
        texts.par_iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic bag-of-features pseudo-embedding: each lowercase word and
/// each character trigram of a padded word is hashed to a signed
/// coordinate. Unit length; texts sharing words or word stems end up close.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    name: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(2),
            name: format!("hash-{dim}"),
        }
    }

    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = content_hash([feature.as_bytes()]);
        let bits = u64::from_str_radix(&h[..16], 16).expect("hex digest");
        let index = (bits % self.dim as u64) as usize;
        let sign = if bits >> 63 == 0 { 1.0 } else { -1.0 };
        v[index] += sign * weight;
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, TaxonomyError> {
        let mut v = vec![0.0; self.dim];
        for word in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            self.add(&mut v, &format!("w:{word}"), 1.0);
            let padded: Vec<char> = format!("^{word}$").chars().collect();
            for tri in padded.windows(3) {
                let t: String = tri.iter().collect();
                self.add(&mut v, &format!("c:{t}"), 0.5);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TaxonomyError::Embedding(format!("no features in {text:?}")));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct CacheIndex {
    embedder: String,
    dim: usize,
    /// text hash -> row in the binary file
    rows: BTreeMap<String, usize>,
}

/// On-disk embedding cache: `embeddings.bin` holds little-endian f64 rows,
/// `embeddings.json` maps text hashes to rows.
pub struct CachedEmbedder<E> {
    inner: E,
    dir: PathBuf,
    state: Mutex<(CacheIndex, Vec<f64>)>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn open(inner: E, dir: &Path) -> Result<Self, TaxonomyError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let index_path = dir.join("embeddings.json");
        let bin_path = dir.join("embeddings.bin");
        let fresh = CacheIndex {
            embedder: inner.name().to_string(),
            dim: inner.dim(),
            rows: BTreeMap::new(),
        };
        let (index, data) = if index_path.exists() && bin_path.exists() {
            let text = std::fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
            let index: CacheIndex = serde_json::from_str(&text).map_err(|e| io_err(&index_path, e))?;
            let bytes = std::fs::read(&bin_path).map_err(|e| io_err(&bin_path, e))?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if index.embedder != fresh.embedder || index.dim != fresh.dim || data.len() != index.rows.len() * index.dim
            {
                log::warn!("embedding cache at {} does not match; starting fresh", dir.display());
                (fresh, Vec::new())
            } else {
                (index, data)
            }
        } else {
            (fresh, Vec::new())
        };
        Ok(Self {
            inner,
            dir: dir.to_path_buf(),
            state: Mutex::new((index, data)),
        })
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").0.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &str) -> Option<Vec<f64>> {
        let state = self.state.lock().expect("cache lock");
        let dim = state.0.dim;
        state
            .0
            .rows
            .get(key)
            .map(|&row| state.1[row * dim..(row + 1) * dim].to_vec())
    }

    /// Writes both files atomically.
    pub fn flush(&self) -> Result<(), TaxonomyError> {
        let state = self.state.lock().expect("cache lock");
        let mut bin = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        for x in &state.1 {
            bin.write_all(&x.to_le_bytes()).map_err(|e| io_err(&self.dir, e))?;
        }
        bin.persist(self.dir.join("embeddings.bin"))
            .map_err(|e| io_err(&self.dir, e.error))?;
        let mut idx = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        serde_json::to_writer_pretty(&mut idx, &state.0).map_err(|e| io_err(&self.dir, e))?;
        idx.persist(self.dir.join("embeddings.json"))
            .map_err(|e| io_err(&self.dir, e.error))?;
        Ok(())
    }
}

fn io_err(path: &Path, e: impl ToString) -> TaxonomyError {
    TaxonomyError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, TaxonomyError> {
        let key = content_hash([text.as_bytes()]);
        if let Some(v) = self.lookup(&key) {
            return Ok(v);
        }
        let v = self.inner.embed(text)?;
        let mut state = self.state.lock().expect("cache lock");
        if !state.0.rows.contains_key(&key) {
            let row = state.0.rows.len();
            state.0.rows.insert(key, row);
            state.1.extend_from_slice(&v);
        }
        Ok(v)
    }
}
