use thiserror::Error;

/// Errors raised by the exact and Monte Carlo routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GwError {
    #[error("type {type_index}: {message}")]
    InvalidLaw { type_index: usize, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("spectral error: {0}")]
    Spectral(String),

    #[error("{what} did not converge within {iterations} iterations")]
    IterationLimit { what: String, iterations: usize },

    #[error("truncation: lost mass {lost:.3e} exceeds tolerance {tolerance:.3e}; enlarge the box")]
    Truncation { lost: f64, tolerance: f64 },

    #[error("degenerate conditioning event: {0}")]
    DegenerateCondition(String),

    #[error("assumption A1 fails: extinction probability of type {type_index} is zero")]
    ZeroExtinction { type_index: usize },

    #[error("no critical tilt a = c*1 with c in [{lo}, {hi}]; supply the tilt vector explicitly")]
    NoCriticalTilt { lo: f64, hi: f64 },

    #[error("assumption A5 fails: offspring laws are periodic in direction e_{direction}")]
    Periodic { direction: usize },

    #[error("assumption A6 fails: {0}")]
    NotPositiveDefinite(String),

    #[error("inconsistent result: {0}")]
    Inconsistent(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no accepted replicates out of {replicates}; increase replicates or relax the condition")]
    NoAcceptance { replicates: u64 },
}

impl GwError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            GwError::InvalidLaw { .. } | GwError::InvalidModel(_) => "validation",
            GwError::Domain(_) => "domain",
            GwError::Spectral(_) => "spectral",
            GwError::IterationLimit { .. } => "iteration-limit",
            GwError::Truncation { .. } => "truncation",
            GwError::DegenerateCondition(_) => "degenerate-condition",
            GwError::ZeroExtinction { .. } => "assumption-a1",
            GwError::NoCriticalTilt { .. } => "assumption-a4",
            GwError::Periodic { .. } => "assumption-a5",
            GwError::NotPositiveDefinite(_) => "assumption-a6",
            GwError::Inconsistent(_) => "inconsistent",
            GwError::Unsupported(_) => "unsupported",
            GwError::NoAcceptance { .. } => "no-acceptance",
        }
    }
}

pub type Result<T> = std::result::Result<T, GwError>;
