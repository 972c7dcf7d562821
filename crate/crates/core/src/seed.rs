//! Root-seed fan-out.
//!
//! Every random stream in the crate is derived from one root seed and a
//! purpose label: `sub = le_u64(sha256(root.to_le_bytes() || label)[..8])`.
//! Changing an unrelated option never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const SAMPLING: &str = "sampling";

pub fn derive(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Sub-seed for an indexed item (frame `i`, epoch `t`, ...).
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(derive(root, label), &index.to_string())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
