//! Deterministic seed derivation for replica streams.
//!
//! Seeds are derived by hashing `(base, label, index)` with SHA-256, so every
//! replica of every command gets an independent, platform-stable stream no
//! matter how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

fn digest(base: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"mrm-seed-v1");
    h.update(base.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Mixes a base seed, a stream label and an index into a 64-bit seed.
pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let d = digest(base, label, index);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// The random generator used by every sampler in the crate.
pub type Rng = ChaCha20Rng;

/// Generator seeded directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::from_seed(digest(seed, "rng", 0))
}

/// Generator for the `index`-th replica of stream `label`.
pub fn replica_rng(base: u64, label: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(base, label, index))
}
