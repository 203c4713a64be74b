//! Deterministic stream derivation.
//!
//! Every stochastic component draws from a ChaCha8 stream whose 32-byte key is
//! `SHA-256(master_seed_le || trial_index_le || label)`. Nothing in a
//! simulation path touches OS entropy or the clock.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derive the named stream for `trial` under `master`.
pub fn stream(master: u64, trial: u64, label: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(trial.to_le_bytes());
    hasher.update(label.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
