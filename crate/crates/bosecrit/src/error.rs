use thiserror::Error;

/// Errors shared by all toolkit modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Expression or data does not have the shape an operation requires.
    #[error("structural error: {0}")]
    Structure(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An iterative scheme failed to converge.
    #[error("numeric error: {0} (residual {residual:e})", residual = .1)]
    NonConvergence(String, f64),

    /// Requested discretization exceeds the memory guard.
    #[error("resource error: grid {requested}^3 exceeds the limit, try {suggested}^3 or smaller")]
    Resource { requested: usize, suggested: usize },

    /// A precondition on the operator state does not hold.
    #[error("precondition error: {0}")]
    Precondition(String),

    /// Trial function degenerate for the given profile.
    #[error("degenerate trial: {0}")]
    DegenerateTrial(String),
}

pub type Result<T> = std::result::Result<T, Error>;
