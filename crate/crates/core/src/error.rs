use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("missing tomography setting(s): {}", .0.join(", "))]
    MissingSettings(Vec<String>),

    #[error("frequency grid too coarse: spacing {spacing_hz:.3e} Hz exceeds {limit_hz:.3e} Hz (tooth FWHM / 10)")]
    GridTooCoarse { spacing_hz: f64, limit_hz: f64 },

    #[error("pulse bandwidth {bandwidth_hz:.3e} Hz is not covered by the comb span {comb_span_hz:.3e} Hz; lengthen the pulse or add teeth")]
    Bandwidth { bandwidth_hz: f64, comb_span_hz: f64 },

    #[error("maximum-likelihood search did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        best: [f64; 4],
        gradient_norm: f64,
    },

    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Io(_) => 2,
            Error::Csv(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
