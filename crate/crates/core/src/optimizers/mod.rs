//! AdamW, the MGPO stepper with adaptive perturbation normalization, and
//! the SAM and random-noise baselines.

mod adamw;
mod apn;
mod baselines;
mod mgpo;
mod optimizer;
mod schedule;

pub use adamw::{adamw_apply, AdamWHyper, AdamWState, MomentumRule};
pub use apn::{apn_update, ApnState};
pub use baselines::{noise_step, plain_step, sam_perturbation, sam_step, SAM_MIN_GRAD_NORM};
pub use mgpo::{compute_perturbation, mgpo_step, MgpoConfig, Perturbation, StepReport};
pub use optimizer::{Method, Optimizer};
pub use schedule::LrSchedule;
