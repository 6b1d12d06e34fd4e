//! Numerical solver for fully coupled McKean-Vlasov forward-backward SDEs
//!
//! ```text
//! dX_t = B(t, X_t, Y_t, Z_t, L(X_t, Y_t)) dt + Sigma(t, X_t, Y_t, L(X_t, Y_t)) dW_t,  X_0 = x0
//! dY_t = -F(t, X_t, Y_t, Z_t, L(X_t, Y_t)) dt + Z_t dW_t,                           Y_T = G(X_T, L(X_T))
//! ```
//!
//! by a damped fixed-point iteration on the pair (decoupling field, law
//! flow). Each outer step freezes the measure argument, solves the
//! resulting classical FBSDE on a grid, and simulates particles for the
//! updated law.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod applications;
pub mod coefficients;
pub mod error;
pub mod fixed_point;
pub mod inner_solver;
pub mod measure;
pub mod problems;

pub use coefficients::{truncate, CoefficientSet, Dims};
pub use error::{Error, Result};
pub use inner_solver::{DecouplingField, GridSpec, ParticlePaths};
pub use measure::{EmpiricalMeasure, MeasureFlow};
