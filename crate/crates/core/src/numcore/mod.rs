//! Dense matrix arithmetic and deterministic random number generation.

mod matrix;
mod rng;

pub use matrix::{global_l2_norm, matmul, Matrix};
pub use rng::{normal_fill, unit_gaussian_direction, Rng, RngState};
