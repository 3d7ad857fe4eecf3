use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// The variants split into two families that the CLI maps onto distinct exit
/// codes: input problems (`Validation`, `Range`, `Unsupported`, `Config`,
/// `Singular`) and numerical failures (`Numerical`, `CannotNormalize`).
#[derive(Debug, Error)]
pub enum MrmError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("argument out of range: {0}")]
    Range(String),

    #[error("unsupported regime: {0}")]
    Unsupported(String),

    #[error("cannot normalize: {0}")]
    CannotNormalize(String),

    #[error("singular argument: {0}")]
    Singular(String),

    #[error("numerical failure in {context}: {detail}")]
    Numerical {
        context: &'static str,
        detail: String,
    },

    #[error("configuration rejected ({} problem(s))", .0.len())]
    Config(Vec<ConfigIssue>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A single configuration problem, keyed by `section.key`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl MrmError {
    pub(crate) fn numerical(context: &'static str, detail: impl Into<String>) -> Self {
        MrmError::Numerical {
            context,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input rather than by a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MrmError::Validation(_)
                | MrmError::Range(_)
                | MrmError::Unsupported(_)
                | MrmError::Config(_)
                | MrmError::Singular(_)
        )
    }
}

pub type Result<T, E = MrmError> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err($crate::error::MrmError::Validation(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
