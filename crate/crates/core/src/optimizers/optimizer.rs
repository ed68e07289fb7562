//! A single front over every stepper, with checkpointable state.

use super::adamw::{AdamWHyper, AdamWState, MomentumRule};
use super::apn::ApnState;
use super::baselines::{noise_step, plain_step, sam_step};
use super::mgpo::{mgpo_step, MgpoConfig, StepReport};
use crate::adapters::{MlpModel, ParamVector, TensorContainer};
use crate::error::{Error, Result};
use crate::numcore::{Rng, RngState};
use crate::tasks::Dataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    AdamW,
    /// MGPO with EMA normalization.
    Mgpo(MgpoConfig),
    /// MGPO with `ḡ` pinned to 1.
    MgpoNoApn(MgpoConfig),
    Sam { rho: f64 },
    Noise { rho: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::AdamW => "adamw",
            Method::Mgpo(_) => "mgpo",
            Method::MgpoNoApn(_) => "mgpo-no-apn",
            Method::Sam { .. } => "sam",
            Method::Noise { .. } => "noise",
        }
    }
}

/// AdamW plus whichever perturbation rule `method` selects.
///
/// Every method tracks `ḡ`; only MGPO reads it; for the others it is
/// telemetry.
#[derive(Clone, Debug)]
pub struct Optimizer {
    method: Method,
    adamw: AdamWState,
    apn: ApnState,
    rng: Rng,
}

impl Optimizer {
    /// `apn_beta` is the EMA decay of `ḡ`; `noise_seed` keys the noise stream.
    pub fn new(
        method: Method,
        model: &MlpModel,
        hyper: AdamWHyper,
        apn_beta: f64,
        noise_seed: u64,
    ) -> Result<Self> {
        match &method {
            Method::Mgpo(c) | Method::MgpoNoApn(c) => c.validate()?,
            Method::Sam { rho } | Method::Noise { rho } if !(*rho > 0.0) => {
                return Err(Error::usage(format!("{} needs rho > 0", method.name())))
            }
            _ => {}
        }
        let apn = match method {
            Method::MgpoNoApn(_) => ApnState::fixed_unit(),
            _ => ApnState::new(apn_beta)?,
        };
        Ok(Self {
            method,
            adamw: AdamWState::for_model(model, hyper)?,
            apn,
            rng: Rng::new(noise_seed),
        })
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn adamw(&self) -> &AdamWState {
        &self.adamw
    }

    pub fn adamw_mut(&mut self) -> &mut AdamWState {
        &mut self.adamw
    }

    pub fn apn(&self) -> &ApnState {
        &self.apn
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adamw.hyper.lr = lr;
    }

    pub fn step(&mut self, model: &mut MlpModel, batch: &Dataset) -> Result<StepReport> {
        let mut report = match &self.method {
            Method::Mgpo(cfg) | Method::MgpoNoApn(cfg) => {
                return mgpo_step(model, batch, &mut self.adamw, &mut self.apn, cfg)
            }
            Method::AdamW => plain_step(model, batch, &mut self.adamw)?,
            Method::Sam { rho } => sam_step(model, batch, &mut self.adamw, *rho)?,
            Method::Noise { rho } => noise_step(model, batch, &mut self.adamw, *rho, &mut self.rng)?,
        };
        self.apn.update(report.grad_norm)?;
        report.g_bar = self.apn.g_bar;
        Ok(report)
    }

    /// Moments, step count, `ḡ` and the noise stream position.
    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        let h = &self.adamw.hyper;
        c.set_meta("method", self.method.name())?;
        c.set_meta("t", self.adamw.t())?;
        c.set_f64("lr", h.lr)?;
        c.set_f64("beta1", h.beta1)?;
        c.set_f64("beta2", h.beta2)?;
        c.set_f64("eps", h.eps)?;
        c.set_f64("weight_decay", h.weight_decay)?;
        c.set_f64("apn.g_bar", self.apn.g_bar)?;
        c.set_f64("apn.beta", self.apn.beta)?;
        c.set_meta("apn.initialized", self.apn.initialized)?;
        c.set_meta("apn.fixed", self.apn.is_fixed())?;
        let rng = self.rng.state();
        c.set_meta("rng.algorithm", Rng::ALGORITHM)?;
        c.set_meta("rng.seed", rng.seed)?;
        c.set_meta("rng.word_pos", rng.word_pos)?;
        self.adamw.m().write_into(&mut c, "m.")?;
        self.adamw.v().write_into(&mut c, "v.")?;
        Ok(c)
    }

    /// Restores state saved by [`to_container`] for the same method and model layout.
    ///
    /// [`to_container`]: Optimizer::to_container
    pub fn restore(&mut self, c: &TensorContainer) -> Result<()> {
        let method: String = c.parse_meta("method")?;
        if method != self.method.name() {
            return Err(Error::Format(format!(
                "checkpoint holds `{method}` state, optimizer is `{}`",
                self.method.name()
            )));
        }
        if c.meta("rng.algorithm")? != Rng::ALGORITHM {
            return Err(Error::Format("checkpoint uses a different generator".into()));
        }
        let hyper = AdamWHyper {
            lr: c.get_f64("lr")?,
            beta1: c.get_f64("beta1")?,
            beta2: c.get_f64("beta2")?,
            eps: c.get_f64("eps")?,
            weight_decay: c.get_f64("weight_decay")?,
        };
        let template: &ParamVector = self.adamw.m();
        let m = ParamVector::read_from(template, c, "m.")?;
        let v = ParamVector::read_from(template, c, "v.")?;
        let adamw = AdamWState::from_parts(hyper, m, v, c.parse_meta("t")?)?;
        let apn = ApnState::from_parts(
            c.get_f64("apn.g_bar")?,
            c.get_f64("apn.beta")?,
            c.parse_meta("apn.initialized")?,
            c.parse_meta("apn.fixed")?,
        )?;
        let rng = Rng::from_state(RngState {
            seed: c.parse_meta("rng.seed")?,
            word_pos: c.parse_meta("rng.word_pos")?,
        });
        self.adamw = adamw;
        self.apn = apn;
        self.rng = rng;
        Ok(())
    }
}

impl Method {
    pub fn momentum_rule(&self) -> MomentumRule {
        match self {
            Method::Mgpo(c) | Method::MgpoNoApn(c) => c.momentum_rule,
            _ => MomentumRule::Ema,
        }
    }
}
