use serde::Serialize;
use vlasov_steady::Error;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Success = 0,
    AssertionFailure = 1,
    Usage = 2,
    NonConvergence = 3,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_kind(&self) -> ExitKind {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Json(_) => ExitKind::Usage,
            CliError::Failed(_) => ExitKind::AssertionFailure,
            CliError::Core(e) => match e {
                Error::NonConvergence { .. } => ExitKind::NonConvergence,
                Error::InvalidParameter(_)
                | Error::Calibration(_)
                | Error::InsufficientDecay { .. }
                | Error::Resolution { .. }
                | Error::Format(_)
                | Error::Io(_) => ExitKind::Usage,
                Error::Quadrature { .. }
                | Error::BelowTable { .. }
                | Error::Singular(_)
                | Error::CapActive { .. }
                | Error::NegativeB { .. }
                | Error::UnderResolved(_)
                | Error::Inconsistent(_)
                | Error::Bracket(_) => ExitKind::AssertionFailure,
            },
        }
    }

    /// Short machine-readable tag.
    pub fn kind_tag(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "assertion",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Core(e) => match e {
                Error::InvalidParameter(_) => "invalid_parameter",
                Error::Quadrature { .. } => "quadrature",
                Error::InsufficientDecay { .. } => "insufficient_decay",
                Error::Calibration(_) => "calibration",
                Error::BelowTable { .. } => "below_table",
                Error::Singular(_) => "singular",
                Error::Resolution { .. } => "resolution",
                Error::NonConvergence { .. } => "non_convergence",
                Error::CapActive { .. } => "cap_active",
                Error::NegativeB { .. } => "negative_b",
                Error::UnderResolved(_) => "under_resolved",
                Error::Inconsistent(_) => "inconsistent",
                Error::Bracket(_) => "bracket",
                Error::Format(_) => "format",
                Error::Io(_) => "io",
            },
        }
    }
}
