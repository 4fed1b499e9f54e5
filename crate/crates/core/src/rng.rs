//! Named random streams. Every stage draws from a stream derived from one
//! 64-bit run seed, a stage label and an index, so any stage (or any single
//! cluster) can be regenerated in isolation and in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn derive_u64(seed: u64, label: &str, index: u64) -> u64 {
    let bytes = derive_seed(seed, label, index);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

pub fn stream(seed: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, label, index))
}
