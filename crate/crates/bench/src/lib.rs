//! Fixtures shared by the criterion benches.

use dpmfuse::denoiser::{DenoiserOracle, Latent};
use dpmfuse::rng;

/// A deterministic clean latent of the given dimension.
pub fn clean_latent(dim: usize, seed: u64) -> Latent {
    Latent::new(rng::gaussian(seed, 0, dim), 0)
}

pub fn gaussian_oracle(dim: usize) -> DenoiserOracle {
    DenoiserOracle::gaussian_posterior(vec![0.0; dim], 1.0)
}
