//! Seed derivation.
//!
//! Every random stream in the pipeline is keyed by a master seed plus a
//! path of labels (trajectory id, frame index, sample index, ...). The key is
//! hashed with SHA-256 into a ChaCha seed, so a stream never depends on how
//! many draws other streams made or on the order work was scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a stream key.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

pub fn derive_seed(master: u64, path: &[Key<'_>]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"dmd-rng-v1");
    h.update(master.to_le_bytes());
    for part in path {
        match part {
            Key::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Key::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

pub fn stream(master: u64, path: &[Key<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, path))
}

/// Derives a child `u64` seed, e.g. to hand to a sub-experiment.
pub fn child_seed(master: u64, path: &[Key<'_>]) -> u64 {
    let s = derive_seed(master, path);
    u64::from_le_bytes(s[..8].try_into().unwrap())
}

/// Hex SHA-256 of arbitrary bytes; used for config hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
