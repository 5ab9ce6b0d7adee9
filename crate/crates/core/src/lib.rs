//! Finite-dimensional Koopman generator approximation with state-inclusive
//! logistic lifting (SILL) dictionaries.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli_io;
pub mod dictionary;
pub mod error;
pub mod error_bounds;
pub mod generator;
pub mod linalg;
pub mod regression;
pub mod scalar;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = linalg::Mat<f64>;
pub type Dictionary = dictionary::SillDictionary<f64>;
pub type Weights = regression::WeightMatrix<f64>;
pub type Generator = generator::KoopmanGenerator<f64>;
pub type Trajectory = simulation::TrajectoryRecord<f64>;

pub type Matrix32 = linalg::Mat<f32>;
pub type Dictionary32 = dictionary::SillDictionary<f32>;
pub type Weights32 = regression::WeightMatrix<f32>;
pub type Generator32 = generator::KoopmanGenerator<f32>;
