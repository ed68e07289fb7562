//! Low-rank adapted linear layer.
//!
//! The layer maps `X (batch×n)` to `X·(W₀ + (α/r)·B·A)ᵀ + bias`, where the
//! base weight `W₀ (m×n)` and the bias are frozen and only `A (r×n)` and
//! `B (m×r)` are trained.

use crate::error::{Error, Result};
use crate::numcore::{normal_fill, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct LoraLinear {
    w0: Matrix,
    bias: Option<Vec<f64>>,
    pub(crate) a: Matrix,
    pub(crate) b: Matrix,
    rank: usize,
    alpha: f64,
}

impl LoraLinear {
    /// Assembles a layer from explicit tensors, validating every shape.
    pub fn from_parts(
        w0: Matrix,
        bias: Option<Vec<f64>>,
        a: Matrix,
        b: Matrix,
        alpha: f64,
    ) -> Result<Self> {
        let (m, n) = w0.shape();
        let rank = a.rows();
        check_rank(m, n, rank)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::usage(format!("alpha must be positive, got {alpha}")));
        }
        if a.cols() != n {
            return Err(Error::Shape {
                op: "lora A",
                lhs: w0.shape(),
                rhs: a.shape(),
            });
        }
        if b.shape() != (m, rank) {
            return Err(Error::Shape {
                op: "lora B",
                lhs: w0.shape(),
                rhs: b.shape(),
            });
        }
        if let Some(bias) = &bias {
            if bias.len() != m {
                return Err(Error::Shape {
                    op: "lora bias",
                    lhs: w0.shape(),
                    rhs: (1, bias.len()),
                });
            }
        }
        Ok(Self {
            w0,
            bias,
            a,
            b,
            rank,
            alpha,
        })
    }

    /// Wraps a frozen base weight with a fresh adapter: `A` is Kaiming-normal
    /// with fan-in gain (`std = √(2/n)`), `B` is zero.
    pub fn init(
        rng: &mut Rng,
        w0: Matrix,
        bias: Option<Vec<f64>>,
        rank: usize,
        alpha: f64,
    ) -> Result<Self> {
        let (m, n) = w0.shape();
        check_rank(m, n, rank)?;
        if rank * 4 > m.min(n) {
            log::warn!("adapter rank {rank} exceeds a quarter of min({m}, {n})");
        }
        let a = normal_fill(rng, rank, n, 0.0, (2.0 / n as f64).sqrt())?;
        let b = Matrix::zeros(m, rank);
        Self::from_parts(w0, bias, a, b, alpha)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `α / r`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn in_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// `W₀ + (α/r)·B·A`.
    pub fn merged_weight(&self) -> Matrix {
        let mut merged = self.w0.clone();
        let delta = self.b.matmul(&self.a).expect("adapter shapes validated");
        merged
            .axpy(self.scaling(), &delta)
            .expect("adapter shapes validated");
        merged
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "lora_forward",
                lhs: x.shape(),
                rhs: self.w0.shape(),
            });
        }
        Ok(())
    }

    /// Factored forward pass. Also returns `X·Aᵀ`, which backward needs.
    pub(crate) fn forward_with_xa(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let mut y = x.matmul_t(&self.w0)?;
        let xa = x.matmul_t(&self.a)?;
        let adapter = xa.matmul_t(&self.b)?;
        y.axpy(self.scaling(), &adapter)?;
        if let Some(bias) = &self.bias {
            y.add_row_vector(bias)?;
        }
        Ok((y, xa))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_with_xa(x).map(|(y, _)| y)
    }

    /// Forward pass through the merged dense weight.
    pub fn forward_merged(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut y = x.matmul_t(&self.merged_weight())?;
        if let Some(bias) = &self.bias {
            y.add_row_vector(bias)?;
        }
        Ok(y)
    }

    /// Forward pass of the frozen base layer alone.
    pub fn forward_base(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut y = x.matmul_t(&self.w0)?;
        if let Some(bias) = &self.bias {
            y.add_row_vector(bias)?;
        }
        Ok(y)
    }
}

fn check_rank(m: usize, n: usize, rank: usize) -> Result<()> {
    let limit = m.min(n);
    if rank == 0 || rank > limit {
        return Err(Error::usage(format!(
            "adapter rank {rank} outside 1..={limit} for a {m}x{n} weight"
        )));
    }
    Ok(())
}

/// New layer with a Gaussian base weight (`std = 1/√n`), then a fresh adapter.
///
/// The base is drawn from `rng` before `A`.
pub fn lora_init(rng: &mut Rng, m: usize, n: usize, rank: usize, alpha: f64) -> Result<LoraLinear> {
    check_rank(m, n, rank)?;
    let w0 = normal_fill(rng, m, n, 0.0, 1.0 / (n as f64).sqrt())?;
    LoraLinear::init(rng, w0, None, rank, alpha)
}

pub fn lora_forward(layer: &LoraLinear, x: &Matrix) -> Result<Matrix> {
    layer.forward(x)
}

pub fn merge_weights(layer: &LoraLinear) -> Matrix {
    layer.merged_weight()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_adapter_is_invisible() {
        let mut rng = Rng::new(5);
        let layer = lora_init(&mut rng, 6, 4, 2, 4.0).unwrap();
        let x = normal_fill(&mut rng, 3, 4, 0.0, 1.0).unwrap();
        let base = x.matmul_t(layer.w0()).unwrap();
        assert!(lora_forward(&layer, &x).unwrap().bitwise_eq(&base));
        assert!(merge_weights(&layer).bitwise_eq(layer.w0()));
    }

    #[test]
    fn rank_bounds() {
        let mut rng = Rng::new(0);
        assert!(lora_init(&mut rng, 3, 5, 4, 1.0).is_err());
        assert!(lora_init(&mut rng, 3, 5, 0, 1.0).is_err());
        assert!(lora_init(&mut rng, 3, 5, 3, 1.0).is_ok());
        assert!(lora_init(&mut rng, 3, 5, 2, 0.0).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = lora_init(&mut Rng::new(11), 8, 8, 2, 2.0).unwrap();
        let b = lora_init(&mut Rng::new(11), 8, 8, 2, 2.0).unwrap();
        assert!(a.a().bitwise_eq(b.a()));
    }

    #[test]
    fn identity_adapter_on_square_layer() {
        // alpha == rank and B·A == I gives X·(W0 + I)ᵀ.
        let w0 = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let layer =
            LoraLinear::from_parts(w0, None, Matrix::identity(2), Matrix::identity(2), 2.0).unwrap();
        let x = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let expected = Matrix::from_rows(&[[0.0, -2.0], [5.0, 11.5]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), expected);
    }

    #[test]
    fn merged_weight_hand_case() {
        // alpha/r = 2, B·A = [[1, 0], [2, 1]]
        let w0 = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let layer = LoraLinear::from_parts(w0, None, a, b, 2.0).unwrap();
        let expected = Matrix::from_rows(&[[3.0, 1.0], [5.0, 1.0]]).unwrap();
        assert_eq!(merge_weights(&layer), expected);
    }

    #[test]
    fn shape_errors() {
        let layer = lora_init(&mut Rng::new(1), 4, 3, 1, 1.0).unwrap();
        assert!(matches!(
            layer.forward(&Matrix::zeros(2, 4)),
            Err(Error::Shape { .. })
        ));
        let w0 = Matrix::zeros(4, 3);
        assert!(LoraLinear::from_parts(w0, Some(vec![0.0; 3]), Matrix::zeros(1, 3), Matrix::zeros(4, 1), 1.0).is_err());
    }
}
