//! Numerical laboratory for the noisy Cucker–Smale flocking equation
//!
//! `df/dt = div(D grad f + (v - u_f + grad phi(v)) f)`, with self-propulsion
//! potential `phi(v) = alpha |v|^4 / 4 + (1 - alpha) |v|^2 / 2` and mean velocity `u_f`.

#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod checks;
pub mod error;
pub mod evolution;
pub mod flux;
pub mod functionals;
pub mod grid;
pub mod model;
pub mod quadrature;
pub mod roots;
pub mod special;
pub mod spectrum;
pub mod stationary;
pub mod tables;

pub use error::{Error, Result};
pub use model::ModelParams;
pub use quadrature::{MomentWeight, QuadratureSettings};
