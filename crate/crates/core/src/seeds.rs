//! Labeled seed derivation.
//!
//! Every random stream in a run is derived from one master seed by hashing
//! the seed together with a label path, e.g. `["split", "3", "England", "gt"]`.
//! Streams derived this way do not depend on the order in which they are
//! requested, so parallel and serial execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hash `seed` and `labels` into a new 64-bit seed.
pub fn derive_seed<S: AsRef<str>>(seed: u64, labels: &[S]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"epic-seed");
    hasher.update(seed.to_le_bytes());
    for label in labels {
        let label = label.as_ref().as_bytes();
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Portable, seedable generator used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng<S: AsRef<str>>(seed: u64, labels: &[S]) -> ChaCha8Rng {
    rng_from(derive_seed(seed, labels))
}
