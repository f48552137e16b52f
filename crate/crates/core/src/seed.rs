//! Deterministic seed derivation.
//!
//! Every random component of the workbench receives its seed through
//! [`derive_seed`], which hashes a master seed together with a purpose tag and
//! any identifying integers (replicate, day, trial, ...). Streams for distinct
//! purposes are therefore statistically independent, and a single master seed
//! fixes the entire run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `master` for the stream identified by `tag` and
/// `ids`. The same inputs always produce the same output.
pub fn derive_seed(master: u64, tag: &str, ids: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    for id in ids {
        hasher.update([0x1f]);
        hasher.update(id.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Convenience constructor for the RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lowercase hex rendering, used for digest strings.
pub fn bytes_to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
