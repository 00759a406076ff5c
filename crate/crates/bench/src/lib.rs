//! Shared fixtures for the benchmark targets.

use rough_milstein_core::fbm::{FbmConfig, FbmPath, FbmSampler};

pub fn sampler(hurst: f64, n_steps: usize, dim_d: usize) -> FbmSampler {
    FbmSampler::new(FbmConfig {
        hurst,
        horizon_t: 1.0,
        n_steps,
        dim_d,
        master_seed: 2024,
    })
    .expect("bench config is valid")
}

pub fn sample_path(hurst: f64, n_steps: usize, dim_d: usize) -> FbmPath {
    sampler(hurst, n_steps, dim_d).path(0).expect("bench path samples")
}
