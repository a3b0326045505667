//! Error taxonomy shared by every module.
//!
//! Variants are grouped by how callers are expected to react: domain-class
//! errors mean the inputs violate a documented precondition, precision-class
//! errors mean the requested computation cannot be represented within the
//! configured bit budget.

use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum SflError {
    /// An input violates a documented mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The working precision needed exceeds the configured ceiling.
    #[error("precision overflow: {required} bits required, ceiling is {ceiling}")]
    PrecisionOverflow { required: u64, ceiling: u64 },

    /// A discrete count exceeds the exactly-representable range.
    #[error("count overflow: {0}")]
    CountOverflow(String),

    /// A quotient's denominator vanishes at the evaluation point.
    #[error("division by zero: {0}")]
    DivisionByZero(String),

    /// A fit was requested but every sample degenerated (underflowed).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Fewer usable refinement scales than the estimator requires.
    #[error("insufficient scales: {0}")]
    InsufficientScales(String),

    /// Malformed numeric or structural text input.
    #[error("parse error: {0}")]
    Parse(String),
}

impl SflError {
    /// True for errors caused by out-of-domain values (as opposed to
    /// representation limits). The CLI maps these to its domain exit code.
    pub fn is_domain_class(&self) -> bool {
        matches!(
            self,
            SflError::Domain(_)
                | SflError::DivisionByZero(_)
                | SflError::DegenerateFit(_)
                | SflError::InsufficientScales(_)
        )
    }

    /// True for errors caused by precision or representable-range limits.
    pub fn is_precision_class(&self) -> bool {
        matches!(
            self,
            SflError::PrecisionOverflow { .. } | SflError::CountOverflow(_)
        )
    }
}
