//! Momentum-guided perturbation (MGPO).
//!
//! Each step perturbs the adapter factors along the optimizer's previous
//! first moment, scaled to radius `ρ / ḡ`, takes a single gradient at the
//! perturbed point, restores the original factors, and hands that gradient
//! to AdamW. Only one backward pass runs per step.

use super::adamw::{AdamWState, MomentumRule};
use super::apn::ApnState;
use crate::adapters::{MlpModel, ParamVector};
use crate::error::{Error, Result};
use crate::tasks::Dataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgpoConfig {
    /// Perturbation radius. Zero disables the perturbation entirely.
    pub rho: f64,
    pub momentum_rule: MomentumRule,
    /// Momentum norms below this skip the perturbation.
    pub min_momentum_norm: f64,
    /// Lower clamp on `ḡ` in the denominator.
    pub min_g_bar: f64,
}

impl MgpoConfig {
    pub fn new(rho: f64) -> Result<Self> {
        let cfg = Self {
            rho,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::usage(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        if !(self.min_momentum_norm > 0.0) || !(self.min_g_bar > 0.0) {
            return Err(Error::usage("MGPO tolerances must be positive"));
        }
        Ok(())
    }
}

impl Default for MgpoConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            momentum_rule: MomentumRule::Ema,
            min_momentum_norm: 1e-12,
            min_g_bar: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub epsilon: ParamVector,
    /// Global L2 norm of `epsilon`.
    pub norm: f64,
    pub applied: bool,
}

/// `ε = ρ · m/‖m‖ · 1/max(ḡ, clamp)`, or zero when the momentum is
/// degenerate, `ḡ` has not been seeded, or `ρ == 0`.
pub fn compute_perturbation(cfg: &MgpoConfig, momentum: &ParamVector, apn: &ApnState) -> Perturbation {
    let skip = || Perturbation {
        epsilon: momentum.zeros_like(),
        norm: 0.0,
        applied: false,
    };
    if !apn.initialized || cfg.rho == 0.0 {
        return skip();
    }
    let m_norm = momentum.global_norm();
    if !(m_norm >= cfg.min_momentum_norm) {
        return skip();
    }
    let radius = cfg.rho / apn.g_bar.max(cfg.min_g_bar);
    let epsilon = momentum.scale(radius / m_norm);
    Perturbation {
        norm: epsilon.global_norm(),
        epsilon,
        applied: true,
    }
}

/// Telemetry from one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Loss of the batch at the point the (first) gradient was taken.
    pub loss: f64,
    /// Norm of the gradient handed to AdamW.
    pub grad_norm: f64,
    /// `ḡ` after this step.
    pub g_bar: f64,
    pub perturb_norm: f64,
    /// Backward passes spent in this step.
    pub grad_evals: u64,
    pub perturbed: bool,
    /// Cosine between the perturbation and the pre-step first moment.
    pub momentum_cosine: Option<f64>,
}

pub(crate) fn loss_and_grad(model: &MlpModel, batch: &Dataset) -> Result<(f64, ParamVector)> {
    let (loss, cache) = model.forward_loss(&batch.inputs, &batch.targets, batch.loss)?;
    let grads = model.backward(&cache)?;
    Ok((loss, grads))
}

/// Loss and gradient at `θ + ε`, with `θ` restored bit for bit afterwards.
pub(crate) fn loss_and_grad_at(
    model: &mut MlpModel,
    batch: &Dataset,
    epsilon: &ParamVector,
) -> Result<(f64, ParamVector)> {
    let snapshot = model.params();
    model.param_axpy(epsilon, 1.0)?;
    let result = loss_and_grad(model, batch);
    model.set_params(&snapshot)?;
    result
}

/// One MGPO step. The perturbation is built from the moment and `ḡ` left
/// by the previous step; `ḡ` is then refreshed with the perturbed-point
/// gradient before AdamW consumes it.
pub fn mgpo_step(
    model: &mut MlpModel,
    batch: &Dataset,
    adamw: &mut AdamWState,
    apn: &mut ApnState,
    cfg: &MgpoConfig,
) -> Result<StepReport> {
    let evals_before = model.grad_evals();
    let pert = compute_perturbation(cfg, adamw.m(), apn);
    let (loss, grads) = if pert.applied {
        loss_and_grad_at(model, batch, &pert.epsilon)?
    } else {
        loss_and_grad(model, batch)?
    };
    let momentum_cosine = if pert.applied {
        pert.epsilon.cosine(adamw.m())?
    } else {
        None
    };
    let grad_norm = grads.global_norm();
    apn.update(grad_norm)?;
    adamw.apply_with_rule(model, &grads, cfg.momentum_rule)?;
    Ok(StepReport {
        loss,
        grad_norm,
        g_bar: apn.g_bar,
        perturb_norm: pert.norm,
        grad_evals: model.grad_evals() - evals_before,
        perturbed: pert.applied,
        momentum_cosine,
    })
}
