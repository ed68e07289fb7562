//! Seeded, portable random number generation.
//!
//! Every stream is a ChaCha8 keystream keyed by `seed_from_u64(seed)`. The
//! keystream is specified independently of endianness and word size, so a
//! seed yields the same numbers on every platform. The full generator state
//! is `(seed, word_pos)`, which is what checkpoints record.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::{global_l2_norm, Matrix};
use crate::error::{Error, Result};

/// Serializable position of an [`Rng`] stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    /// Name of the underlying generator, recorded in checkpoints.
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// Independent child stream seeded from this one.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Matrix of i.i.d. `Normal(mean, std)` entries.
pub fn normal_fill(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> Result<Matrix> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::usage(format!(
            "normal_fill needs finite mean and std >= 0, got mean={mean} std={std}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::usage(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| mean + std * rng.standard_normal())
        .collect();
    Matrix::new(rows, cols, data)
}

/// Gaussian sample over the given shapes, rescaled to unit global L2 norm.
pub fn unit_gaussian_direction(rng: &mut Rng, shapes: &[(usize, usize)]) -> Result<Vec<Matrix>> {
    if shapes.is_empty() {
        return Err(Error::usage("unit_gaussian_direction needs at least one shape"));
    }
    for _ in 0..2 {
        let mut parts = shapes
            .iter()
            .map(|&(r, c)| normal_fill(rng, r, c, 0.0, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let norm = global_l2_norm(&parts)?;
        if norm > 0.0 {
            parts.iter_mut().for_each(|p| p.scale_in_place(1.0 / norm));
            return Ok(parts);
        }
    }
    Err(Error::numeric("unit_gaussian_direction: all-zero draw twice"))
}
