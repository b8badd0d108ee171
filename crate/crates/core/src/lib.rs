//! Optimal control of model quantum systems.
//!
//! Grid systems are propagated with a second-order split-operator scheme and
//! N-level systems with the analogous matrix splitting. The optimizer module
//! iterates the coupled forward/backward equations for final-time and
//! time-dependent targets under penalty, fluence, spectral and envelope
//! constraints.

pub mod controllability;
pub mod error;
pub mod field;
pub mod filters;
mod fourier;
pub mod optimizer;
pub mod par;
pub mod propagator;
pub mod qsystem;
pub mod targets;
pub mod twolevel;

pub use error::{Error, Result};
pub use field::ControlField;
pub use num_complex::Complex64 as C64;
