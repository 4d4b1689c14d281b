//! Buffered linear Toeplitz (BLT) factorizations of the all-ones
//! lower-triangular matrix for private prefix sums.
//!
//! The crate builds factorizations `A = BC` whose Toeplitz generators are
//! low-degree rational functions, evaluates their error in closed form,
//! optimizes their parameters, and streams correlated Gaussian noise with a
//! constant number of buffers per step.

pub mod autodiff;
pub mod blt_params;
pub mod error;
pub mod error_eval;
pub mod io;
pub mod lbfgs;
pub mod optimizer;
pub mod rational_approx;
pub mod recursive_factor;
pub mod seq_core;
pub mod streaming;

pub use error::{Error, Result};
