//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter is outside its documented domain.
    #[error("invalid parameter {name}: {message} (got {value})")]
    InvalidParameter {
        name: &'static str,
        message: &'static str,
        value: f64,
    },

    /// Configuration failed validation; one message per offending field.
    #[error("invalid configuration:\n{}", issues.join("\n"))]
    InvalidConfig { issues: Vec<String> },

    /// The order-2 Taylor response is only defined for photon numbers <= 2.
    #[error("Taylor order-2 click model is undefined for n = {photons} photons (n <= 2 required)")]
    TaylorDomain { photons: u32 },

    /// Scan records do not share a single delay grid.
    #[error("inconsistent delay grid: {0}")]
    GridMismatch(String),

    /// Delay grid too coarse for fringe removal at the requested period.
    #[error(
        "delay spacing {spacing_fs} fs too coarse to remove fringes of period {period_fs} fs; \
         spacing must be at most half the period ({} fs)", period_fs / 2.0
    )]
    FringeSpacing { spacing_fs: f64, period_fs: f64 },

    /// The weighted normal matrix is singular (degenerate data).
    #[error("fit failed: singular normal matrix (degenerate data)")]
    SingularNormalMatrix,

    /// Too few points to constrain the five-parameter model.
    #[error("fit requires at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },

    /// Efficiency estimation needs a positive background-subtracted singles rate.
    #[error(
        "efficiency estimate undefined: singles ({singles}) must exceed background ({background})"
    )]
    NonpositiveHeraldRate { singles: f64, background: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// CSV record could not be parsed; carries a 1-based line number when known.
    #[error("CSV parse error at line {line}: {message}")]
    CsvParse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, message: &'static str, value: f64) -> Self {
        Error::InvalidParameter {
            name,
            message,
            value,
        }
    }
}
