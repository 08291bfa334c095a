use thiserror::Error;

/// Errors reported by the beamforming library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is singular or ill-conditioned: pivot {pivot:e} below {threshold:e}")]
    IllConditioned { pivot: f64, threshold: f64 },

    #[error("matrix is not Hermitian (asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("non-differentiable point: |w| = {magnitude:e} at a projection input")]
    NonDifferentiable { magnitude: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kind (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::NotHermitian { .. }
                | Error::NonFinite(_)
                | Error::NonDifferentiable { .. }
                | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
