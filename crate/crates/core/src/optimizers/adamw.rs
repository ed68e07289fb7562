//! AdamW with decoupled weight decay and an exposed first moment.
//!
//! ```text
//! θ ← θ − lr·wd·θ
//! m ← β₁·m + (1 − β₁)·g        (or m ← β₁·m + g, see MomentumRule)
//! v ← β₂·v + (1 − β₂)·g²
//! θ ← θ − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use crate::adapters::{MlpModel, ParamVector};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// How the first moment absorbs a new gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MomentumRule {
    /// `m ← β₁·m + (1 − β₁)·g`, the usual AdamW moment.
    #[default]
    Ema,
    /// `m ← β₁·m + g`, heavy-ball accumulation fed to the same AdamW update.
    HeavyBall,
}

impl MomentumRule {
    pub fn name(self) -> &'static str {
        match self {
            MomentumRule::Ema => "optimizer-moment",
            MomentumRule::HeavyBall => "heavy-ball",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimizer-moment" => Some(MomentumRule::Ema),
            "heavy-ball" => Some(MomentumRule::HeavyBall),
            _ => None,
        }
    }
}

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::usage("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::usage("eps must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::usage("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub hyper: AdamWHyper,
    m: ParamVector,
    v: ParamVector,
    t: u64,
}

impl AdamWState {
    /// Zero moments shaped like `template`.
    pub fn new(template: &ParamVector, hyper: AdamWHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            m: template.zeros_like(),
            v: template.zeros_like(),
            t: 0,
        })
    }

    pub fn for_model(model: &MlpModel, hyper: AdamWHyper) -> Result<Self> {
        Self::new(&model.params(), hyper)
    }

    /// Rebuilds a state from stored moments and step count.
    pub fn from_parts(hyper: AdamWHyper, m: ParamVector, v: ParamVector, t: u64) -> Result<Self> {
        hyper.validate()?;
        m.check_aligned(&v, "adamw moments")?;
        Ok(Self { hyper, m, v, t })
    }

    /// First moment; this is the vector MGPO perturbs along.
    pub fn m(&self) -> &ParamVector {
        &self.m
    }

    pub fn v(&self) -> &ParamVector {
        &self.v
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Replaces the first moment; used to inject states in tests and ablations.
    pub fn set_m(&mut self, m: ParamVector) -> Result<()> {
        self.m.check_aligned(&m, "set_m")?;
        self.m = m;
        Ok(())
    }

    pub fn apply(&mut self, model: &mut MlpModel, grads: &ParamVector) -> Result<()> {
        self.apply_with_rule(model, grads, MomentumRule::Ema)
    }

    pub fn apply_with_rule(
        &mut self,
        model: &mut MlpModel,
        grads: &ParamVector,
        rule: MomentumRule,
    ) -> Result<()> {
        self.m.check_aligned(grads, "adamw_apply")?;
        if !self.m.is_aligned(&model.params()) {
            return Err(Error::usage("adamw state does not match the model's factors"));
        }
        if !grads.is_finite() {
            return Err(Error::numeric("gradients passed to adamw_apply"));
        }
        let AdamWHyper {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let grad_coef = match rule {
            MomentumRule::Ema => 1.0 - beta1,
            MomentumRule::HeavyBall => 1.0,
        };
        self.t += 1;
        let step = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - beta1.powi(step);
        let bc2 = 1.0 - beta2.powi(step);

        let mut updates: Vec<Matrix> = Vec::with_capacity(grads.len());
        for (((_, m), (_, v)), (_, g)) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grads.iter()) {
            let mut upd = Matrix::zeros(g.rows(), g.cols());
            for (((mi, vi), &gi), ui) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(g.data())
                .zip(upd.data_mut())
            {
                *mi = beta1 * *mi + grad_coef * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *ui = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
            updates.push(upd);
        }
        model.update_params(|i, p| {
            let upd = &updates[i];
            for (pi, &ui) in p.data_mut().iter_mut().zip(upd.data()) {
                if weight_decay != 0.0 {
                    *pi -= lr * weight_decay * *pi;
                }
                *pi -= ui;
            }
        });
        Ok(())
    }
}

/// One AdamW update of `model` from `grads`, using the standard moment rule.
pub fn adamw_apply(state: &mut AdamWState, model: &mut MlpModel, grads: &ParamVector) -> Result<()> {
    state.apply(model, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{Factor, LoraLinear, ParamKey};

    /// Scalar model: one 1x1 layer whose only A entry is the parameter.
    fn scalar_model(a: f64) -> MlpModel {
        let layer = LoraLinear::from_parts(
            Matrix::zeros(1, 1),
            None,
            Matrix::filled(1, 1, a),
            Matrix::filled(1, 1, 0.0),
            1.0,
        )
        .unwrap();
        MlpModel::new(vec![layer]).unwrap()
    }

    fn grads(ga: f64, gb: f64) -> ParamVector {
        ParamVector::new(vec![
            (ParamKey { layer: 0, factor: Factor::A }, Matrix::filled(1, 1, ga)),
            (ParamKey { layer: 0, factor: Factor::B }, Matrix::filled(1, 1, gb)),
        ])
        .unwrap()
    }

    #[test]
    fn first_step_hand_values() {
        let mut model = scalar_model(0.5);
        let mut st = AdamWState::for_model(&model, AdamWHyper::default()).unwrap();
        adamw_apply(&mut st, &mut model, &grads(1.0, 0.0)).unwrap();
        assert_eq!(st.t(), 1);
        assert!((st.m().flat().next().unwrap() - 0.1).abs() < 1e-15);
        assert!((st.v().flat().next().unwrap() - 0.001).abs() < 1e-15);
        let delta = model.params().flat().next().unwrap() - 0.5;
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut model = scalar_model(0.5);
        let mut st = AdamWState::for_model(&model, AdamWHyper::default()).unwrap();
        adamw_apply(&mut st, &mut model, &grads(1.0, 1.0)).unwrap();
        let m = st.m().clone();
        let v = st.v().clone();
        adamw_apply(&mut st, &mut model, &grads(0.0, 0.0)).unwrap();
        assert!(st.m().flat().zip(m.flat()).all(|(a, b)| a == 0.9 * b));
        assert!(st.v().flat().zip(v.flat()).all(|(a, b)| a == 0.999 * b));

        let mut fresh = scalar_model(0.5);
        let mut st = AdamWState::for_model(&fresh, AdamWHyper::default()).unwrap();
        let before = fresh.params();
        adamw_apply(&mut st, &mut fresh, &grads(0.0, 0.0)).unwrap();
        assert!(fresh.params().bitwise_eq(&before));
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut model = scalar_model(0.5);
        let mut st = AdamWState::for_model(&model, AdamWHyper::default()).unwrap();
        let before = st.clone();
        assert!(matches!(
            adamw_apply(&mut st, &mut model, &grads(f64::NAN, 0.0)),
            Err(Error::Numeric(_))
        ));
        assert_eq!(st, before);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut model = scalar_model(2.0);
        let hyper = AdamWHyper {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWHyper::default()
        };
        let mut st = AdamWState::for_model(&model, hyper).unwrap();
        adamw_apply(&mut st, &mut model, &grads(0.0, 0.0)).unwrap();
        assert_eq!(model.params().flat().next().unwrap(), 2.0 - 0.1 * 0.5 * 2.0);
    }

    #[test]
    fn heavy_ball_moment_accumulates() {
        let mut model = scalar_model(0.0);
        let mut st = AdamWState::for_model(&model, AdamWHyper::default()).unwrap();
        st.apply_with_rule(&mut model, &grads(1.0, 0.0), MomentumRule::HeavyBall).unwrap();
        st.apply_with_rule(&mut model, &grads(1.0, 0.0), MomentumRule::HeavyBall).unwrap();
        assert!((st.m().flat().next().unwrap() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyper() {
        let model = scalar_model(0.0);
        for bad in [
            AdamWHyper { beta1: 1.0, ..Default::default() },
            AdamWHyper { lr: -1.0, ..Default::default() },
            AdamWHyper { eps: 0.0, ..Default::default() },
        ] {
            assert!(AdamWState::for_model(&model, bad).is_err());
        }
    }
}
