//! Quantum time-of-arrival probabilities for ideal detectors.
//!
//! Units are fixed throughout: ħ = 1, lengths in units of the packet width
//! σ_X, momenta in units of 1/σ_X and times in units of m·σ_X² unless a
//! function takes an explicit mass.
//!
//! The crate is organised bottom-up:
//!
//! * [`quadrature`]: Gauss–Legendre grids, oscillation budgets, Airy functions.
//! * [`states`]: packets, superpositions, thermal ensembles, two-particle states.
//! * [`toa_single`]: single-detector densities for the η-family of proposals.
//! * [`toa_pair`]: joint densities, coherence and coincidence functions, witnesses.
//! * [`toa_sequential`]: two successive detections on one particle and the F kernel.
//! * [`specialfns`]: the distribution u(s) and its regularisation ζ_ε(s).

pub mod povm;
pub mod quadrature;
pub mod specialfns;
pub mod states;
pub mod toa_pair;
pub mod toa_sequential;
pub mod toa_single;

pub use num_complex::Complex64;

/// Errors raised by every numerical routine in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("oscillation budget violated: grid has {actual:.3} nodes per unit, needs {required:.3}")]
    BudgetViolation { required: f64, actual: f64 },
    #[error("numerical guard: {0}")]
    Guard(String),
}

pub type Result<T> = std::result::Result<T, ToaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ToaError::InvalidArgument(msg.into()))
}

pub(crate) fn guard<T>(msg: impl Into<String>) -> Result<T> {
    Err(ToaError::Guard(msg.into()))
}
