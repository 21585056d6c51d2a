//! Keyed random substreams.
//!
//! Every stream is a ChaCha20 generator whose 32-byte seed is
//! `seed (LE) ‖ replication (LE) ‖ purpose tag (LE) ‖ 0u64`, so streams for
//! different replications or purposes never overlap and any replication can
//! be regenerated on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Fixed population quantities (attributes, unobservables, effects).
    Population = 1,
    /// Per-replication assignment draws.
    Assignment = 2,
    /// Per-replication sampling draws.
    Sampling = 3,
}

/// The generator for `(seed, rep, purpose)`.
pub fn substream(seed: u64, rep: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&rep.to_le_bytes());
    key[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Bernoulli(p) draw; `p = 1` is always true and `p = 0` always false.
pub fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// ±`magnitude` with equal probability.
pub fn rademacher<R: Rng>(rng: &mut R, magnitude: f64) -> f64 {
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}
