use thiserror::Error;

/// Failures raised by the numerical pipeline.
///
/// Assumption checks that merely fail (a Lipschitz ratio above its declared
/// constant, an indefinite dissipativity matrix) are reported through their
/// report types, not through this enum.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("diffusion coefficient G(x) is singular or its inverse is inaccurate (residual {residual:.3e})")]
    SingularDiffusion { residual: f64 },
    #[error("state blew up on path {path} at time index {step}")]
    BlowUp { path: usize, step: usize },
    #[error("regression at time index {step} is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { step: usize, condition: f64 },
    #[error("tail tolerance {tolerance:.3e} needs horizon {needed:.3e} beyond the cap {cap:.3e}")]
    InfeasibleTolerance {
        tolerance: f64,
        needed: f64,
        cap: f64,
    },
    #[error("degenerate decay fit: {0}")]
    DegenerateFit(String),
    #[error("conjugate table has an empty effective domain")]
    EmptyDomain,
    #[error("gradient surrogate unavailable: {0}")]
    GradientUnavailable(String),
    #[error("malformed path bundle: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
