//! Deterministic seed derivation: one master seed fans out into labelled,
//! indexed sub-seeds so trials are reproducible independently of execution
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a 32-byte seed from `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"czk-seed");
    h.update(master.to_be_bytes());
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    h.finalize().into()
}

pub fn rng_for(master: u64, label: &str, index: u64) -> Rng {
    Rng::from_seed(derive_seed(master, label, index))
}

/// Derives a child `u64` seed, for APIs taking a plain seed.
pub fn derive_u64(master: u64, label: &str, index: u64) -> u64 {
    let s = derive_seed(master, label, index);
    u64::from_be_bytes(s[..8].try_into().expect("8 bytes"))
}
