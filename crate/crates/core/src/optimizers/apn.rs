//! Adaptive perturbation normalization: an EMA of global gradient norms.

use crate::error::{Error, Result};

/// Running normalizer `ḡ`.
///
/// The first observed norm seeds `ḡ` directly; later ones blend in as
/// `ḡ ← β·ḡ + (1 − β)·‖g‖`. A *fixed* state pins `ḡ` to 1 once it has
/// seen a gradient, which switches the normalization off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApnState {
    pub g_bar: f64,
    pub beta: f64,
    pub initialized: bool,
    fixed: bool,
}

impl ApnState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::usage(format!("EMA decay must lie in [0, 1], got {beta}")));
        }
        Ok(Self {
            g_bar: 0.0,
            beta,
            initialized: false,
            fixed: false,
        })
    }

    /// Normalizer that reads 1 after the first gradient, whatever its size.
    pub fn fixed_unit() -> Self {
        Self {
            g_bar: 0.0,
            beta: 1.0,
            initialized: false,
            fixed: true,
        }
    }

    pub fn from_parts(g_bar: f64, beta: f64, initialized: bool, fixed: bool) -> Result<Self> {
        let mut s = if fixed { Self::fixed_unit() } else { Self::new(beta)? };
        if !(g_bar >= 0.0 && g_bar.is_finite()) {
            return Err(Error::usage("g_bar must be finite and nonnegative"));
        }
        s.g_bar = g_bar;
        s.initialized = initialized;
        Ok(s)
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed
    }

    /// Folds in one gradient norm. Leaves the state alone on bad input.
    pub fn update(&mut self, grad_norm: f64) -> Result<()> {
        if !grad_norm.is_finite() || grad_norm < 0.0 {
            return Err(Error::numeric(format!("gradient norm {grad_norm}")));
        }
        if self.fixed {
            self.g_bar = 1.0;
        } else if self.initialized {
            self.g_bar = self.beta * self.g_bar + (1.0 - self.beta) * grad_norm;
        } else {
            self.g_bar = grad_norm;
        }
        self.initialized = true;
        Ok(())
    }
}

pub fn apn_update(apn: &ApnState, grad_norm: f64) -> Result<ApnState> {
    let mut next = *apn;
    next.update(grad_norm)?;
    Ok(next)
}
