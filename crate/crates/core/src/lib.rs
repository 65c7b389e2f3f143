//! GRAPE optimal control for spin systems.
//!
//! Piecewise-constant control pulses are optimized for point-to-point state
//! transfer using exact propagator derivatives (commutator series,
//! eigenframe, or finite differences) and quasi-Newton optimizers
//! (DFP, BFGS, L-BFGS).

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod expkernel;
pub mod gradient;
pub mod linalg;
pub mod optim;
pub mod propagation;
pub mod spinsys;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{GrapeError, Result};
