//! Strong approximation of SDEs driven by fractional Brownian motion with
//! Hurst index in (1/4, 1/2): exact fGn sampling, step-3 signature algebra,
//! modified Milstein-type stepping schemes, stochastic modified equations,
//! and Monte Carlo rate-measurement harnesses.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod fbm;
pub mod io;
pub mod models;
pub mod modified_eq;
pub mod paths;
pub mod schemes;
pub mod seed;
pub mod signature;
pub mod stats;

pub use analysis::{ErrorStatistic, ErrorTable, RateReport, RatioProcess};
pub use error::{Error, Result};
pub use experiments::{ExperimentConfig, ExperimentKind, RunManifest};
pub use fbm::{FbmConfig, FbmPath, FbmSampler};
pub use models::{NamedModel, VectorField};
pub use modified_eq::{ModifiedCoefficients, TmeRun};
pub use paths::{MultiIndex, PiecewiseLinearPath};
pub use schemes::{IntegrateOptions, Scheme, SchemeRun};
pub use signature::{SigElement, SigIncrementTable};
