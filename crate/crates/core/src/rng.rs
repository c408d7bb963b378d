//! Counter-style Gaussian draws: every vector is addressed by `(seed, key)`
//! so a step's noise does not depend on what was drawn before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Key reserved for the initial pure-noise latent of a run.
pub const START_KEY: u64 = u64::MAX;

pub fn gaussian(seed: u64, key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Domain-separated key, for generators that need several independent
/// streams per step.
pub fn key(domain: u32, index: u64) -> u64 {
    ((domain as u64) << 48) ^ index
}
