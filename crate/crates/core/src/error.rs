//! Error taxonomy shared by the library and the command-line driver.
//!
//! The three variants map one-to-one onto the CLI's nonzero exit codes:
//! validation errors (bad problem definitions or configuration), numerical
//! failures (solver breakdown, non-finite results), and inconclusive rate
//! fits (not enough noise-resolved data points to measure a slope).

use std::fmt;

/// A single field-validation failure: where it happened and what was seen.
#[derive(Debug, Clone)]
pub struct ValidationFailure {
    /// Which field or property failed (e.g. `"drift_grad"`, `"periodicity"`).
    pub field: String,
    /// The evaluation point, as coordinates.
    pub point: Vec<f64>,
    /// Expected value (reference or finite-difference surrogate).
    pub expected: f64,
    /// Actual value produced by the problem definition.
    pub got: f64,
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {:?}: expected {:.6e}, got {:.6e}",
            self.field, self.point, self.expected, self.got
        )
    }
}

/// Report collecting all failures found while validating a problem.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} validation failure(s):", self.failures.len())?;
        for failure in &self.failures {
            writeln!(f, "  - {failure}")?;
        }
        Ok(())
    }
}

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A problem definition or run configuration is invalid.
    #[error("validation failed: {0}")]
    Validation(String),
    /// A numerical computation broke down (non-finite values, singular
    /// systems, residuals exceeding hard limits).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A convergence-rate fit had fewer than the required number of
    /// noise-resolved data points.
    #[error("inconclusive rate fit: {0}")]
    Inconclusive(String),
}

impl Error {
    pub fn validation_report(report: &ValidationReport) -> Self {
        Error::Validation(report.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
