//! Parameter identification for a linear-elastic plate from displacement data.
//!
//! The crate couples an iteratively regularized Gauss-Newton method (IRGNM) with an
//! adaptive reduced-basis surrogate controlled by a trust region and certified error
//! estimators. See the `examples/` directory for runnable entry points.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod io;
pub mod irgnm;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod rom;
pub mod timestep;
pub mod tr;

pub use error::{Error, Result};
