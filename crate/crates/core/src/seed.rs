//! Stable sub-seed derivation. Every random choice in the pipeline draws from
//! `derive(global, stage, item)` so per-item work does not depend on
//! scheduling order.

use sha2::{Digest, Sha256};

pub fn derive(global: u64, stage: &str, item: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(stage.as_bytes());
    hasher.update([0u8]);
    hasher.update(item.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Sub-seed for the `index`-th draw under an already derived seed.
pub fn child(seed: u64, index: u64) -> u64 {
    derive(seed, "child", &index.to_string())
}
