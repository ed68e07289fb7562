//! Reference steppers: plain AdamW, two-pass SAM, and isotropic noise.

use super::adamw::AdamWState;
use super::mgpo::{loss_and_grad, loss_and_grad_at, Perturbation, StepReport};
use crate::adapters::{MlpModel, ParamVector};
use crate::error::{Error, Result};
use crate::numcore::{unit_gaussian_direction, Rng};
use crate::tasks::Dataset;

/// SAM skips its perturbation when the first gradient is this small.
pub const SAM_MIN_GRAD_NORM: f64 = 1e-12;

pub fn plain_step(model: &mut MlpModel, batch: &Dataset, adamw: &mut AdamWState) -> Result<StepReport> {
    let evals_before = model.grad_evals();
    let (loss, grads) = loss_and_grad(model, batch)?;
    adamw.apply(model, &grads)?;
    Ok(StepReport {
        loss,
        grad_norm: grads.global_norm(),
        g_bar: 0.0,
        perturb_norm: 0.0,
        grad_evals: model.grad_evals() - evals_before,
        perturbed: false,
        momentum_cosine: None,
    })
}

/// SAM's ascent step `ρ·g/‖g‖`; not applied when `‖g‖` is below
/// [`SAM_MIN_GRAD_NORM`].
pub fn sam_perturbation(grad: &ParamVector, rho: f64) -> Perturbation {
    let norm = grad.global_norm();
    if !(norm >= SAM_MIN_GRAD_NORM) {
        return Perturbation {
            epsilon: grad.zeros_like(),
            norm: 0.0,
            applied: false,
        };
    }
    let epsilon = grad.scale(rho / norm);
    Perturbation {
        norm: epsilon.global_norm(),
        epsilon,
        applied: true,
    }
}

/// Sharpness-aware step restricted to the adapter factors: gradient at `θ`,
/// ascend to `θ + ρ·g/‖g‖`, gradient there, restore, AdamW with the second
/// gradient.
pub fn sam_step(
    model: &mut MlpModel,
    batch: &Dataset,
    adamw: &mut AdamWState,
    rho: f64,
) -> Result<StepReport> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::usage(format!("SAM rho must be positive, got {rho}")));
    }
    let evals_before = model.grad_evals();
    let (loss, first) = loss_and_grad(model, batch)?;
    let pert = sam_perturbation(&first, rho);
    if !pert.applied {
        adamw.apply(model, &first)?;
        return Ok(StepReport {
            loss,
            grad_norm: first.global_norm(),
            g_bar: 0.0,
            perturb_norm: 0.0,
            grad_evals: model.grad_evals() - evals_before,
            perturbed: false,
            momentum_cosine: None,
        });
    }
    let momentum_cosine = pert.epsilon.cosine(adamw.m())?;
    let (_, second) = loss_and_grad_at(model, batch, &pert.epsilon)?;
    adamw.apply(model, &second)?;
    Ok(StepReport {
        loss,
        grad_norm: second.global_norm(),
        g_bar: 0.0,
        perturb_norm: pert.norm,
        grad_evals: model.grad_evals() - evals_before,
        perturbed: true,
        momentum_cosine,
    })
}

/// Perturbs along a fresh isotropic Gaussian direction of norm `ρ`.
pub fn noise_step(
    model: &mut MlpModel,
    batch: &Dataset,
    adamw: &mut AdamWState,
    rho: f64,
    rng: &mut Rng,
) -> Result<StepReport> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::usage(format!("noise rho must be positive, got {rho}")));
    }
    let evals_before = model.grad_evals();
    let direction = unit_gaussian_direction(rng, &model.param_shapes())?;
    let epsilon = model
        .params()
        .with_tensors(direction)?
        .scale(rho);
    let momentum_cosine = epsilon.cosine(adamw.m())?;
    let (loss, grads) = loss_and_grad_at(model, batch, &epsilon)?;
    adamw.apply(model, &grads)?;
    Ok(StepReport {
        loss,
        grad_norm: grads.global_norm(),
        g_bar: 0.0,
        perturb_norm: epsilon.global_norm(),
        grad_evals: model.grad_evals() - evals_before,
        perturbed: true,
        momentum_cosine,
    })
}
