//! Numerical laboratory for a strain-structured SIS epidemic model
//!
//! ```text
//! v_t = (d(x) v_x)_x − ρ(x) v + S ∫β(x, y) v(y)^{1+γ(y)} dy,   v_x(0) = v_x(1) = 0
//! S'  = ∫ρ v − S ∫∫β(x, y) v(y)^{1+γ(y)} dy dx
//! ```
//!
//! on the strain interval [0, 1]. The crate provides a conservative IMEX time
//! stepper, Perron spectral bounds of the associated positive operator
//! families, endemic steady-state solvers, linearised stability indicators,
//! the finite-strain ODE reductions, and a harness for probing finite-time
//! blow-up when the incidence exponent exceeds 2.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blowup;
pub mod cli;
pub mod coefficients;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod ode;
pub mod operators;
pub mod output;
pub mod scenario;
pub mod spectral;
pub mod stability;
pub mod steady;

pub use coefficients::{sample_coefficients, CoefficientSpec, ModelCoefficients};
pub use error::{Result, SisError};
pub use grid::{Grid, State};
