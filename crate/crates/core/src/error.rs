use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("singular system (pivot {pivot:.3e} at index {index}); use a ridge term > 0")]
    Singular { index: usize, pivot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("time {t} outside the valid domain [0, 1)")]
    TimeDomain { t: f64 },

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("backward integration produced a non-finite state for sample {sample}")]
    BackwardDiverged { sample: usize },

    #[error("non-finite training loss at step {step} ({context})")]
    NonFiniteLoss { step: usize, context: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures caused by numerics (divergence, singular solves, NaN losses)
    /// rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Diverged { .. }
                | Error::BackwardDiverged { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}
