//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed and a purpose tag, so streams never overlap and a
//! given (seed, tag) always reproduces the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, tag: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, tag))
}

/// Stream for step `step` of a process keyed by `tag`. Used by the trainer so a
/// resumed run draws exactly what an uninterrupted run would have drawn.
pub fn step_stream(seed: u64, tag: &str, step: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(derive_seed(seed, tag));
    h.update(step.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
