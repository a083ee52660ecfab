use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. `key` names the offending field.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive definite ({context}); use gamma > 0 to regularize")]
    Singular { context: &'static str },

    #[error("simplex solver did not converge after {iterations} iterations (projected gradient {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
        objective: f64,
    },

    #[error("division hazard at unit {unit}: |nu| = {value:.3e} is below 1e-8")]
    DivisionHazard { unit: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("replication {rep} (n = {n}, seed = {seed}) failed: {source}")]
    Replication {
        rep: usize,
        n: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Dimension { .. } | Error::Io(_) | Error::Csv(_) => true,
            Error::Replication { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
