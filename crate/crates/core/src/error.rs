//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A map definition violates one of the structural axioms.
    #[error("model axiom violated: {0}")]
    Axiom(String),

    /// The requested point lies outside the domain where the quantity is
    /// defined (e.g. a divergent pressure series).
    #[error("domain error: {0}")]
    Domain(String),

    /// The truncated successor graph is malformed (reducible, empty class, …).
    #[error("structural error: {0}")]
    Structure(String),

    /// An iterative solver failed to converge; carries the last residual.
    #[error("numeric error: {what} (residual {residual:e})")]
    Numeric { what: String, residual: f64 },

    /// Configuration parse or validation failure.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numeric(what: impl Into<String>, residual: f64) -> Self {
        Error::Numeric { what: what.into(), residual }
    }
}
