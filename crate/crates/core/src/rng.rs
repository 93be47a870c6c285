//! Seeded random streams.
//!
//! Every stochastic step takes an explicit stream. Streams for independent
//! work items are derived from a root seed and a label, so results do not
//! depend on the order in which parallel workers finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream for `label` under `seed`.
pub fn substream(seed: u64, label: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Hex sha256 of the given byte chunks, each length-prefixed.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Uniform in [0, 1) keyed by arbitrary content; used by the stubs.
pub fn keyed_uniform<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> f64 {
    let hash = content_hash(parts);
    let bits = u64::from_str_radix(&hash[..16], 16).expect("hex digest");
    (bits >> 11) as f64 / (1u64 << 53) as f64
}
