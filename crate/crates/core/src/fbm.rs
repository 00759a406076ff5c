//! d-dimensional fractional Brownian motion on uniform grids.
//!
//! Increments (fractional Gaussian noise) are the sampled primitive; node
//! values are their prefix sums. Sampling is exact in distribution: circulant
//! embedding of the stationary increment covariance driven by an FFT, with a
//! dense Cholesky fallback when the embedding spectrum dips below the
//! rounding floor. Every path is reproducible from (master_seed, path_index)
//! alone, so parallel generation is order-independent.

use crate::error::{Error, Result};
use crate::io;
use crate::seed::{self, Component};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, OnceLock};

/// Eigenvalues in (-tol*λmax, 0) are rounding noise and clamp to zero;
/// anything below disqualifies the embedding for this configuration.
const EIG_REL_TOL: f64 = 1e-12;

/// Cap on the dense fallback factorization (n² memory, n³ work).
const MAX_CHOLESKY_N: usize = 1 << 11;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FbmConfig {
    pub hurst: f64,
    pub horizon_t: f64,
    pub n_steps: usize,
    pub dim_d: usize,
    pub master_seed: u64,
}

impl FbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::parameter(
                "hurst",
                format!("{} outside (0, 1)", self.hurst),
            ));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return Err(Error::parameter(
                "horizon_t",
                format!("{} not a positive finite real", self.horizon_t),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::parameter("n_steps", "must be at least 1"));
        }
        if self.dim_d == 0 {
            return Err(Error::parameter("dim_d", "must be at least 1"));
        }
        Ok(())
    }

    /// Grid spacing h = T/n.
    pub fn step(&self) -> f64 {
        self.horizon_t / self.n_steps as f64
    }
}

/// Autocovariance γ(k) = ½h^{2H}(|k+1|^{2H} − 2|k|^{2H} + |k−1|^{2H}) of
/// stationary fBm increments at spacing h.
pub fn fgn_autocovariance(lag: usize, hurst: f64, h: f64) -> Result<f64> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::parameter(
            "hurst",
            format!("{hurst} outside (0, 1)"),
        ));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::parameter("h", format!("{h} not positive")));
    }
    let two_h = 2.0 * hurst;
    let k = lag as f64;
    Ok(0.5
        * h.powf(two_h)
        * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h)))
}

/// Cov(B_s, B_t) = ½(t^{2H} + s^{2H} − |t−s|^{2H}) for one component.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let two_h = 2.0 * hurst;
    0.5 * (t.abs().powf(two_h) + s.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    CirculantEmbedding,
    DenseCholesky,
}

/// One sampled path. `values` is row-major (n_steps+1) × dim_d with row 0
/// exactly zero. Coarsened paths keep the parent's seed identity so coupled
/// multi-resolution runs can be traced to one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub config: FbmConfig,
    pub path_index: u64,
    /// Resolution of the originally sampled path (= n_steps unless coarsened).
    pub source_n_steps: usize,
    values: Vec<f64>,
}

impl FbmPath {
    pub fn n_steps(&self) -> usize {
        self.config.n_steps
    }

    pub fn dim(&self) -> usize {
        self.config.dim_d
    }

    pub fn step(&self) -> f64 {
        self.config.step()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.config.step()
    }

    /// Node value B_{t_k} as a d-slice.
    pub fn node(&self, k: usize) -> &[f64] {
        let d = self.config.dim_d;
        &self.values[k * d..(k + 1) * d]
    }

    /// Increment ΔB_{k+1} = B_{t_{k+1}} − B_{t_k} written into `out`.
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let a = self.node(k);
        let b = self.node(k + 1);
        for (o, (x, y)) in out.iter_mut().zip(b.iter().zip(a)) {
            *o = x - y;
        }
    }

    pub fn increment(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.increment_into(k, &mut out);
        out
    }

    /// Copy of one coordinate's node values.
    pub fn component(&self, l: usize) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.node(k)[l]).collect()
    }

    /// Wraps recorded node values (row-major (n+1)×d, first row zero) as a
    /// path, e.g. to replay a stored sample.
    pub fn from_nodes(config: FbmConfig, path_index: u64, values: Vec<f64>) -> Result<FbmPath> {
        config.validate()?;
        let want = (config.n_steps + 1) * config.dim_d;
        if values.len() != want {
            return Err(Error::Dimension {
                context: "path node values",
                expected: want,
                got: values.len(),
            });
        }
        if values[..config.dim_d].iter().any(|v| *v != 0.0) {
            return Err(Error::parameter("values", "first node must be zero"));
        }
        Ok(FbmPath {
            config,
            path_index,
            source_n_steps: config.n_steps,
            values,
        })
    }

    /// CSV export: header `t,b1,...,bd`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("t");
        for l in 1..=self.dim() {
            header.push_str(&format!(",b{l}"));
        }
        let lines = (0..=self.n_steps()).map(|k| {
            let mut fields = Vec::with_capacity(self.dim() + 1);
            fields.push(self.time(k));
            fields.extend_from_slice(self.node(k));
            io::csv_line(&fields)
        });
        io::csv_document(&header, lines)
    }
}

/// Restriction of the same sample to every `factor`-th grid point. Exact:
/// no resampling, so errors measured against a coarsening stay coupled.
pub fn coarsen(path: &FbmPath, factor: usize) -> Result<FbmPath> {
    if factor == 0 || path.n_steps() % factor != 0 {
        return Err(Error::parameter(
            "factor",
            format!("{} does not divide n_steps {}", factor, path.n_steps()),
        ));
    }
    let n_coarse = path.n_steps() / factor;
    let d = path.dim();
    let mut values = Vec::with_capacity((n_coarse + 1) * d);
    for k in 0..=n_coarse {
        values.extend_from_slice(path.node(k * factor));
    }
    Ok(FbmPath {
        config: FbmConfig {
            n_steps: n_coarse,
            ..path.config
        },
        path_index: path.path_index,
        source_n_steps: path.source_n_steps,
        values,
    })
}

enum CholState {
    Factor(Arc<Vec<f64>>),
    Failed(String),
}

/// Reusable generator for one configuration: the embedding spectrum and FFT
/// plan are computed once, then any path index can be drawn independently.
pub struct FbmSampler {
    config: FbmConfig,
    fft: Arc<dyn Fft<f64>>,
    /// √(λ_k / norm) factors, length n+1; empty when the embedding is unusable.
    spectral: Vec<f64>,
    min_eigenvalue: f64,
    gamma: Vec<f64>,
    chol: OnceLock<CholState>,
}

impl FbmSampler {
    pub fn new(config: FbmConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_steps;
        let h = config.step();
        let gamma: Vec<f64> = (0..=n)
            .map(|k| fgn_autocovariance(k, config.hurst, h))
            .collect::<Result<_>>()?;

        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);

        // Circulant first row: γ(0..n) then the mirrored tail γ(n−1..1).
        let mut buf: Vec<Complex<f64>> = Vec::with_capacity(m);
        buf.extend(gamma.iter().map(|&g| Complex::new(g, 0.0)));
        buf.extend(gamma[1..n].iter().rev().map(|&g| Complex::new(g, 0.0)));
        fft.process(&mut buf);

        let lambda: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let lambda_max = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_eigenvalue = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        let eig_tol = EIG_REL_TOL * lambda_max;

        let spectral = if min_eigenvalue >= -eig_tol {
            let m_f = m as f64;
            (0..=n)
                .map(|k| {
                    let lam = lambda[k].max(0.0);
                    let norm = if k == 0 || k == n { m_f } else { 2.0 * m_f };
                    (lam / norm).sqrt()
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(FbmSampler {
            config,
            fft,
            spectral,
            min_eigenvalue,
            gamma,
            chol: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &FbmConfig {
        &self.config
    }

    /// Smallest circulant eigenvalue seen at construction.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn embedding_usable(&self) -> bool {
        !self.spectral.is_empty()
    }

    /// Samples path `path_index`, preferring the embedding and falling back
    /// to dense Cholesky only when the spectrum disqualified it.
    pub fn path(&self, path_index: u64) -> Result<FbmPath> {
        if self.embedding_usable() {
            self.path_with(path_index, SamplingMethod::CirculantEmbedding)
        } else {
            self.path_with(path_index, SamplingMethod::DenseCholesky)
                .map_err(|e| match e {
                    Error::Degenerate { msg, .. } => Error::Embedding {
                        min_eigenvalue: self.min_eigenvalue,
                        tol: EIG_REL_TOL,
                        fallback: msg,
                    },
                    other => other,
                })
        }
    }

    pub fn path_with(&self, path_index: u64, method: SamplingMethod) -> Result<FbmPath> {
        let n = self.config.n_steps;
        let d = self.config.dim_d;
        let parent = seed::derive(self.config.master_seed, Component::FbmPath, path_index);
        let mut values = vec![0.0; (n + 1) * d];
        let mut fgn = Vec::with_capacity(n);
        for dim in 0..d {
            let mut rng = seed::rng_from(seed::derive_sub(parent, dim as u64));
            fgn.clear();
            match method {
                SamplingMethod::CirculantEmbedding => {
                    if !self.embedding_usable() {
                        return Err(Error::Embedding {
                            min_eigenvalue: self.min_eigenvalue,
                            tol: EIG_REL_TOL,
                            fallback: "fallback not attempted (method forced)".into(),
                        });
                    }
                    self.fgn_circulant(&mut rng, &mut fgn);
                }
                SamplingMethod::DenseCholesky => {
                    let l = self.cholesky_factor()?;
                    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    for i in 0..n {
                        let row = &l[i * n..i * n + i + 1];
                        fgn.push(row.iter().zip(&z).map(|(a, b)| a * b).sum());
                    }
                }
            }
            for k in 0..n {
                values[(k + 1) * d + dim] = values[k * d + dim] + fgn[k];
            }
        }
        Ok(FbmPath {
            config: self.config,
            path_index,
            source_n_steps: n,
            values,
        })
    }

    fn fgn_circulant(&self, rng: &mut ChaCha12Rng, out: &mut Vec<f64>) {
        let n = self.config.n_steps;
        let m = 2 * n;
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        let z0: f64 = rng.sample(StandardNormal);
        buf[0] = Complex::new(self.spectral[0] * z0, 0.0);
        for k in 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let w = Complex::new(self.spectral[k] * re, self.spectral[k] * im);
            buf[k] = w;
            buf[m - k] = w.conj();
        }
        let zn: f64 = rng.sample(StandardNormal);
        buf[n] = Complex::new(self.spectral[n] * zn, 0.0);
        self.fft.process(&mut buf);
        out.extend(buf[..n].iter().map(|c| c.re));
    }

    fn cholesky_factor(&self) -> Result<Arc<Vec<f64>>> {
        let state = self.chol.get_or_init(|| {
            let n = self.config.n_steps;
            if n > MAX_CHOLESKY_N {
                return CholState::Failed(format!(
                    "dense Cholesky fallback capped at n = {MAX_CHOLESKY_N}, got {n}"
                ));
            }
            match cholesky_toeplitz(&self.gamma, n) {
                Ok(l) => CholState::Factor(Arc::new(l)),
                Err(pivot) => {
                    CholState::Failed(format!("dense Cholesky failed at pivot {pivot}"))
                }
            }
        });
        match state {
            CholState::Factor(l) => Ok(Arc::clone(l)),
            CholState::Failed(msg) => Err(Error::degenerate("cholesky", msg.clone())),
        }
    }
}

/// Lower-triangular factor of the Toeplitz matrix Γ[i][j] = γ(|i−j|).
fn cholesky_toeplitz(gamma: &[f64], n: usize) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gamma[i - j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(i);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Single-path convenience for path index 0.
pub fn sample_fbm(config: &FbmConfig) -> Result<FbmPath> {
    FbmSampler::new(*config)?.path(0)
}
