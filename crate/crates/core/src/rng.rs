//! Counter-based substream derivation from the single run seed.
//!
//! Every random draw in a run comes from a substream keyed by
//! `(seed, purpose-tag, indices...)`. Substreams are independent of each
//! other and of evaluation order, so parallelising workers or reordering
//! rounds never changes sampled values.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a deterministic RNG for `(seed, tag, indices)`.
pub fn substream(seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([tag.len() as u8]);
    hasher.update(tag.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
