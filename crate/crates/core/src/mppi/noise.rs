//! Counter-based Gaussian perturbations.
//!
//! Sample `k` of solve `iteration` draws from its own ChaCha stream keyed by
//! `(seed, iteration)` with stream id `k`, so every `(k, t, dim)` entry is
//! fixed regardless of how samples are spread over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MppiConfig, MppiError};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the generator for one solve.
pub fn iteration_key(seed: u64, iteration: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ iteration.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Writes the `T x n` noise of sample `k` into `out`.
pub fn fill_sample_noise(key: u64, k: usize, std_dev: &[f64], out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(k as u64);
    let n = std_dev.len();
    for (i, v) in out.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = z * std_dev[i % n];
    }
}

/// `K x T x n` noise, sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    pub samples: usize,
    pub horizon: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl NoiseTensor {
    pub fn get(&self, k: usize, t: usize, d: usize) -> f64 {
        self.data[(k * self.horizon + t) * self.dim + d]
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let len = self.horizon * self.dim;
        &self.data[k * len..(k + 1) * len]
    }
}

/// Zero-mean Gaussian perturbations with the configured variances.
pub fn sample_noise(cfg: &MppiConfig, iteration: u64) -> Result<NoiseTensor, MppiError> {
    cfg.validate()?;
    let std_dev: Vec<f64> = cfg.sigma.iter().map(|v| v.sqrt()).collect();
    let key = iteration_key(cfg.seed, iteration);
    let len = cfg.horizon * cfg.dim();
    let mut data = vec![0.0; cfg.samples * len];
    for (k, chunk) in data.chunks_exact_mut(len).enumerate() {
        fill_sample_noise(key, k, &std_dev, chunk);
    }
    Ok(NoiseTensor {
        samples: cfg.samples,
        horizon: cfg.horizon,
        dim: cfg.dim(),
        data,
    })
}
