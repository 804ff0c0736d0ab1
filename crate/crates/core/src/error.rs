use thiserror::Error;

/// Errors raised by the laboratory operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    /// A drift that the SDE engine cannot integrate (singular, unmollified).
    #[error("contract error: {0}")]
    Contract(String),
    #[error("infeasible-constants: {0}")]
    InfeasibleConstants(String),
    #[error("infeasible-exponent: {0}")]
    InfeasibleExponent(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl LabError {
    /// Stable short code used by the CLI in structured error reports.
    pub fn code(&self) -> &'static str {
        match self {
            LabError::InvalidArgument(_) => "invalid-argument",
            LabError::Domain(_) => "domain",
            LabError::Numerical(_) => "numerical",
            LabError::Configuration(_) => "configuration",
            LabError::Contract(_) => "contract",
            LabError::InfeasibleConstants(_) => "infeasible-constants",
            LabError::InfeasibleExponent(_) => "infeasible-exponent",
            LabError::Parse(_) => "parse",
            LabError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
