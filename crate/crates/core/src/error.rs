use thiserror::Error;

/// Failure taxonomy shared by every module.
///
/// Variants split into caller mistakes (`InvalidParameter`, `OffGrid`,
/// `OutOfHorizon`, `Io`, `Format`) and mathematical refusals, see
/// [`Error::is_refusal`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("time {t} is not a multiple of the grid step {dt}")]
    OffGrid { t: f64, dt: f64 },

    #[error("time {t} outside the available horizon [{lo}, {hi}]")]
    OutOfHorizon { t: f64, lo: f64, hi: f64 },

    #[error("fixed-point iteration does not contract: {0}")]
    StepSizeFailure(String),

    #[error("contraction margin {margin:.6} is not below 1")]
    NonContractive { margin: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("spectral classification ambiguous: {0}")]
    Ambiguous(String),

    #[error("chart construction failed: {0}")]
    ChartFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True when the request was well formed but the mathematics declined it
    /// (non-contraction, missing spectral gap, singular operator, ...).
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            Error::SingularOperator(_)
                | Error::StepSizeFailure(_)
                | Error::NonContractive { .. }
                | Error::Refused(_)
                | Error::Ambiguous(_)
                | Error::ChartFailure(_)
        )
    }

    /// Short machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::SingularOperator(_) => "singular_operator",
            Error::OffGrid { .. } => "off_grid",
            Error::OutOfHorizon { .. } => "out_of_horizon",
            Error::StepSizeFailure(_) => "step_size_failure",
            Error::NonContractive { .. } => "non_contractive",
            Error::Refused(_) => "refused",
            Error::Ambiguous(_) => "ambiguous_classification",
            Error::ChartFailure(_) => "chart_failure",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
