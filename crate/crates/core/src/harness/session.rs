//! One seeded training run, steppable and checkpointable.

use std::time::Instant;

use rand::RngCore;

use super::config::{layer_dims, ExperimentConfig};
use super::telemetry::{SeedStatus, SeedSummary, TelemetryRow};
use crate::adapters::{LoraLinear, MlpModel, TensorContainer};
use crate::error::{Error, Result};
use crate::metrics::{summarize, LossCurve, StabilitySummary, SummaryConfig};
use crate::numcore::{normal_fill, Matrix, Rng};
use crate::optimizers::{Optimizer, StepReport};
use crate::tasks::{BatchStream, BatchStreamState, TaskData};

/// Loss above this counts toward divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;
/// Consecutive bad steps that end a run.
pub const DIVERGENCE_STREAK: usize = 5;

/// Seeds drawn from the per-run root generator, in draw order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SeedPlan {
    batch_seed: u64,
    noise_seed: u64,
    sharpness_seed: u64,
}

/// Builds the student network for `cfg` on top of the task's frozen base
/// (or a random frozen base when the task has none).
pub fn build_model(cfg: &ExperimentConfig, task: &TaskData, rng: &mut Rng) -> Result<MlpModel> {
    let rank = cfg.model.rank;
    let alpha = cfg.model.alpha;
    let layers = match &task.base {
        Some(base) => base
            .iter()
            .map(|(w0, bias)| LoraLinear::init(rng, w0.clone(), bias.clone(), rank, alpha))
            .collect::<Result<Vec<_>>>()?,
        None => layer_dims(&cfg.task, &cfg.model)
            .into_iter()
            .map(|(m, n)| {
                let w0 = normal_fill(rng, m, n, 0.0, 1.0 / (n as f64).sqrt())?;
                let bias = normal_fill(rng, 1, m, 0.0, 1.0)?.into_data();
                LoraLinear::init(rng, w0, Some(bias), rank, alpha)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    MlpModel::new(layers)
}

/// Everything needed to continue a run exactly where it stopped.
pub struct Session<'a> {
    cfg: &'a ExperimentConfig,
    task: &'a TaskData,
    config_hash: String,
    seed: u64,
    plan: SeedPlan,
    model: MlpModel,
    optimizer: Optimizer,
    stream: BatchStream,
    rows: Vec<TelemetryRow>,
    streak: usize,
    diverged: bool,
    wall_ms: f64,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a ExperimentConfig, task: &'a TaskData, config_hash: &str, seed: u64) -> Result<Self> {
        let mut root = Rng::new(seed);
        let mut init = root.fork();
        let plan = SeedPlan {
            batch_seed: root.next_u64(),
            noise_seed: root.next_u64(),
            sharpness_seed: root.next_u64(),
        };
        let model = build_model(cfg, task, &mut init)?;
        let optimizer = Optimizer::new(
            cfg.optim.method(),
            &model,
            cfg.optim.hyper(),
            cfg.optim.apn_beta,
            plan.noise_seed,
        )?;
        let stream = BatchStream::new(task.train.len(), cfg.train.batch_size, plan.batch_seed)?;
        Ok(Self {
            cfg,
            task,
            config_hash: config_hash.to_string(),
            seed,
            plan,
            model,
            optimizer,
            stream,
            rows: Vec::with_capacity(cfg.train.steps),
            streak: 0,
            diverged: false,
            wall_ms: 0.0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[TelemetryRow] {
        &self.rows
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn is_done(&self) -> bool {
        self.diverged || self.rows.len() >= self.cfg.train.steps
    }

    /// Runs one optimizer step and records its telemetry row.
    ///
    /// A numeric failure inside the step is recorded as a NaN row (the
    /// optimizer leaves parameters and state untouched) and counts toward
    /// divergence.
    pub fn step(&mut self) -> Result<&TelemetryRow> {
        if self.is_done() {
            return Err(Error::usage("session already finished"));
        }
        let started = Instant::now();
        let t = self.rows.len();
        let lr = self
            .cfg
            .optim
            .schedule
            .lr_at(self.cfg.optim.lr, t, self.cfg.train.steps);
        self.optimizer.set_lr(lr);
        let batch = self.stream.next_batch(&self.task.train)?;
        let evals_before = self.model.grad_evals();
        let report = match self.optimizer.step(&mut self.model, &batch) {
            Ok(r) => r,
            Err(Error::Numeric(what)) => {
                log::debug!("seed {} step {t}: non-finite {what}", self.seed);
                StepReport {
                    loss: f64::NAN,
                    grad_norm: f64::NAN,
                    g_bar: self.optimizer.apn().g_bar,
                    perturb_norm: 0.0,
                    grad_evals: 0,
                    perturbed: false,
                    momentum_cosine: None,
                }
            }
            Err(e) => return Err(e),
        };
        let row = TelemetryRow {
            step: t,
            loss: report.loss,
            grad_norm: report.grad_norm,
            g_bar: report.g_bar,
            perturb_norm: report.perturb_norm,
            grad_evals: self.model.grad_evals() - evals_before,
            lr,
        };
        if row.loss.is_finite() && row.loss <= DIVERGENCE_LOSS {
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= DIVERGENCE_STREAK {
                self.diverged = true;
                log::warn!("seed {} diverged at step {t}", self.seed);
            }
        }
        self.rows.push(row);
        self.wall_ms += started.elapsed().as_secs_f64() * 1e3;
        Ok(self.rows.last().unwrap())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `step_index() == k` (or the run ends first).
    pub fn run_until(&mut self, k: usize) -> Result<()> {
        while !self.is_done() && self.rows.len() < k {
            self.step()?;
        }
        Ok(())
    }

    /// Final summary: curve statistics, sharpness and eval loss at the
    /// unperturbed parameters.
    pub fn summary(&mut self) -> Result<SeedSummary> {
        let steps = self.rows.len();
        let grad_evals = self.rows.iter().map(|r| r.grad_evals).sum();
        let nan = StabilitySummary {
            rebound: f64::NAN,
            rebound_raw: f64::NAN,
            final_loss: f64::NAN,
            best_loss: f64::NAN,
            steps_to_best: 0,
            sharpness: f64::NAN,
        };
        if self.diverged || steps < 2 {
            return Ok(SeedSummary {
                seed: self.seed,
                status: if self.diverged { SeedStatus::Diverged } else { SeedStatus::Ok },
                steps,
                stability: nan,
                eval_loss: f64::NAN,
                grad_evals,
                wall_ms: self.wall_ms,
            });
        }
        // Isolated non-finite rows that did not end the run are carried
        // forward from the previous finite loss.
        let mut last = f64::NAN;
        let losses: Vec<f64> = self
            .rows
            .iter()
            .map(|r| {
                if r.loss.is_finite() {
                    last = r.loss;
                }
                last
            })
            .collect();
        let first_finite = losses.iter().position(|l| l.is_finite()).unwrap_or(steps);
        let curve = LossCurve::new(losses[first_finite.min(steps - 1)..].to_vec())?;
        let rho = self.cfg.optim.rho;
        let cfg = SummaryConfig {
            smoothing_window: self.cfg.train.smoothing_window,
            rho_eval: if rho > 0.0 { rho } else { SummaryConfig::default().rho_eval },
            sharpness_samples: self.cfg.train.sharpness_samples,
            seed: self.plan.sharpness_seed,
        };
        let stability = summarize(&curve, &mut self.model, &self.task.train, &cfg)?;
        Ok(SeedSummary {
            seed: self.seed,
            status: SeedStatus::Ok,
            steps,
            stability,
            eval_loss: self.task.eval.loss_of(&self.model)?,
            grad_evals,
            wall_ms: self.wall_ms,
        })
    }

    /// Serializes model, optimizer, batch position and the rows so far.
    pub fn checkpoint(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.set_meta("session.config_hash", &self.config_hash)?;
        c.set_meta("session.seed", self.seed)?;
        c.set_meta("session.step", self.rows.len())?;
        c.set_meta("session.streak", self.streak)?;
        c.set_meta("session.diverged", self.diverged)?;
        c.set_f64("session.wall_ms", self.wall_ms)?;
        let s = self.stream.state();
        c.set_meta("stream.base_seed", s.base_seed)?;
        c.set_meta("stream.epoch", s.epoch)?;
        c.set_meta("stream.cursor", s.cursor)?;
        c.merge_prefixed("model/", &self.model.to_container()?)?;
        c.merge_prefixed("optim/", &self.optimizer.to_container()?)?;
        if !self.rows.is_empty() {
            let data: Vec<f64> = self
                .rows
                .iter()
                .flat_map(|r| {
                    [
                        r.step as f64,
                        r.loss,
                        r.grad_norm,
                        r.g_bar,
                        r.perturb_norm,
                        r.grad_evals as f64,
                        r.lr,
                    ]
                })
                .collect();
            c.push_tensor("telemetry", Matrix::new(self.rows.len(), 7, data)?)?;
        }
        Ok(c)
    }

    /// Rebuilds a session from a checkpoint written for the same config and seed.
    pub fn resume(
        cfg: &'a ExperimentConfig,
        task: &'a TaskData,
        config_hash: &str,
        c: &TensorContainer,
    ) -> Result<Self> {
        let stored_hash = c.meta("session.config_hash")?;
        if stored_hash != config_hash {
            return Err(Error::Format(format!(
                "checkpoint was written for config {stored_hash}, not {config_hash}"
            )));
        }
        let seed: u64 = c.parse_meta("session.seed")?;
        let mut session = Session::new(cfg, task, config_hash, seed)?;
        let model = MlpModel::from_container(&c.extract_prefixed("model/"))?;
        if model.param_shapes() != session.model.param_shapes() {
            return Err(Error::Format("checkpoint model layout differs from config".into()));
        }
        session.model = model;
        session.optimizer.restore(&c.extract_prefixed("optim/"))?;
        let state = BatchStreamState {
            base_seed: c.parse_meta("stream.base_seed")?,
            epoch: c.parse_meta("stream.epoch")?,
            cursor: c.parse_meta("stream.cursor")?,
        };
        session.stream = BatchStream::from_state(task.train.len(), cfg.train.batch_size, state)?;
        let step: usize = c.parse_meta("session.step")?;
        session.rows = if step == 0 {
            Vec::new()
        } else {
            let t = c.tensor("telemetry")?;
            if t.shape() != (step, 7) {
                return Err(Error::Format("telemetry block does not match step count".into()));
            }
            (0..step)
                .map(|i| {
                    let r = t.row(i);
                    TelemetryRow {
                        step: r[0] as usize,
                        loss: r[1],
                        grad_norm: r[2],
                        g_bar: r[3],
                        perturb_norm: r[4],
                        grad_evals: r[5] as u64,
                        lr: r[6],
                    }
                })
                .collect()
        };
        session.streak = c.parse_meta("session.streak")?;
        session.diverged = c.parse_meta("session.diverged")?;
        session.wall_ms = c.get_f64("session.wall_ms")?;
        Ok(session)
    }
}
