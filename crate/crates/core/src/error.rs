use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Each variant maps onto a coarse machine-readable [`ErrorCategory`] so the
/// command-line front end can report failures without parsing messages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular coupling: {0}")]
    SingularCoupling(String),

    #[error("unknown qubit `{0}`")]
    UnknownQubit(String),

    #[error("invalid qubit selection: {0}")]
    Selection(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("resource limit: Hilbert-space dimension {dim} exceeds cap {cap}")]
    Resource { dim: usize, cap: usize },

    #[error("dressed-state labeling failed: {0}")]
    Labeling(String),

    #[error("near-pole evaluation: {0}")]
    NearPole(String),

    #[error("inconsistent sign: {0}")]
    InconsistentSign(String),

    #[error("integrator step-size underflow at t = {t} us (h = {h:e})")]
    Stiffness { t: f64, h: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("near-resonance: {0}")]
    NearResonance(String),

    #[error("cannot calibrate: {0}")]
    Uncalibratable(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("schema error at `{path}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Schema {
        path: String,
        line: Option<usize>,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse error classes, stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Domain,
    Numerical,
    Calibration,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Domain => "domain",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Calibration => "calibration",
            ErrorCategory::Io => "io",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Schema { .. }
            | Error::UnknownQubit(_)
            | Error::Selection(_)
            | Error::Usage(_) => {
                ErrorCategory::Config
            }
            Error::Domain(_)
            | Error::SingularCoupling(_)
            | Error::Dimension(_)
            | Error::NearPole(_)
            | Error::InconsistentSign(_)
            | Error::Contract(_)
            | Error::NearResonance(_) => ErrorCategory::Domain,
            Error::Resource { .. }
            | Error::Labeling(_)
            | Error::Stiffness { .. }
            | Error::Aliasing(_)
            | Error::Fit(_) => ErrorCategory::Numerical,
            Error::Uncalibratable(_) => ErrorCategory::Calibration,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
