use thiserror::Error;

/// Errors raised by the numerical pipelines.
///
/// `Refused` marks a violated precondition (bad input, guard rails); the
/// remaining variants are numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition refused: {0}")]
    Refused(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("no Dirac point found: smallest consecutive splitting at k was {min_splitting:.3e} (tolerance {tolerance:.1e})")]
    NoDiracPoint { min_splitting: f64, tolerance: f64 },

    #[error("degenerate cone: v_D = {v_d:.3e} below {v_min:.1e}")]
    DegenerateCone { v_d: f64, v_min: f64 },

    #[error("normalization failure: {0}")]
    Normalization(String),

    #[error("step control failed: achieved error {achieved:.3e} > tolerance {tolerance:.1e} at {steps} steps{hint}")]
    StepControl {
        achieved: f64,
        tolerance: f64,
        steps: usize,
        hint: String,
    },
}

impl Error {
    pub fn refused(msg: impl Into<String>) -> Self {
        Error::Refused(msg.into())
    }

    /// Precondition refusals map to exit code 2, everything else to 1.
    pub fn is_refusal(&self) -> bool {
        matches!(self, Error::Refused(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
