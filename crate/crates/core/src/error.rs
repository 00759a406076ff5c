use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter outside its documented domain.
    #[error("invalid `{name}`: {msg}")]
    Parameter { name: &'static str, msg: String },

    /// Config-file problem, located by line number (0 = whole file).
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    /// Circulant embedding unusable and the dense Cholesky fallback did not
    /// produce a factor either.
    #[error(
        "covariance embedding not positive semi-definite: smallest circulant eigenvalue \
         {min_eigenvalue:.6e} (relative tolerance {tol:.1e}); {fallback}"
    )]
    Embedding {
        min_eigenvalue: f64,
        tol: f64,
        fallback: String,
    },

    /// A trajectory or estimator produced a non-finite value.
    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: String, step: usize },

    /// Implicit one-step solver did not reach tolerance.
    #[error(
        "fixed-point iteration for {scheme} failed at step {step}: residual {residual:.3e} after {iters} iterations"
    )]
    FixedPoint {
        scheme: &'static str,
        step: usize,
        residual: f64,
        iters: usize,
    },

    /// Incompatible array/grid dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Tried to fit or compare data that cannot support the operation.
    #[error("degenerate input for {context}: {msg}")]
    Degenerate { context: &'static str, msg: String },

    /// Unknown registry identifier (model, scheme, experiment kind).
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            msg: msg.into(),
        }
    }

    pub fn degenerate(context: &'static str, msg: impl Into<String>) -> Self {
        Error::Degenerate {
            context,
            msg: msg.into(),
        }
    }
}
