//! LoRA adapters trained with momentum-guided perturbation (MGPO).
pub mod adapters;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numcore;
pub mod optimizers;
pub mod tasks;

pub use error::{Error, Result};
