//! Experiment configuration: a flat `key = value` file with dotted sections.
//!
//! ```text
//! # comments start with '#'
//! name = lowrank-mgpo
//! task.kind = lowrank-recovery
//! model.rank = 32
//! optim.kind = mgpo
//! optim.rho = 0.05
//! train.seeds = 0,1,2
//! output.dir = runs
//! ```
//!
//! Unknown keys are rejected (with a spelling suggestion when one is close),
//! as are duplicate keys and values that violate a constraint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizers::{AdamWHyper, LrSchedule, Method, MgpoConfig, MomentumRule};
use crate::tasks::{TaskKind, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    AdamW,
    Mgpo,
    MgpoNoApn,
    Sam,
    Noise,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::AdamW => "adamw",
            OptimizerKind::Mgpo => "mgpo",
            OptimizerKind::MgpoNoApn => "mgpo-no-apn",
            OptimizerKind::Sam => "sam",
            OptimizerKind::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            OptimizerKind::AdamW,
            OptimizerKind::Mgpo,
            OptimizerKind::MgpoNoApn,
            OptimizerKind::Sam,
            OptimizerKind::Noise,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hidden widths; only meaningful for tasks that do not supply a base.
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub apn_beta: f64,
    pub momentum_rule: MomentumRule,
    pub min_momentum_norm: f64,
    pub min_g_bar: f64,
}

impl OptimConfig {
    pub fn hyper(&self) -> AdamWHyper {
        AdamWHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn method(&self) -> Method {
        let mgpo = MgpoConfig {
            rho: self.rho,
            momentum_rule: self.momentum_rule,
            min_momentum_norm: self.min_momentum_norm,
            min_g_bar: self.min_g_bar,
        };
        match self.kind {
            OptimizerKind::AdamW => Method::AdamW,
            OptimizerKind::Mgpo => Method::Mgpo(mgpo),
            OptimizerKind::MgpoNoApn => Method::MgpoNoApn(mgpo),
            OptimizerKind::Sam => Method::Sam { rho: self.rho },
            OptimizerKind::Noise => Method::Noise { rho: self.rho },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub smoothing_window: usize,
    pub sharpness_samples: usize,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

/// Every accepted key with its default, in canonical order.
const KEYS: &[(&str, &str)] = &[
    ("name", "experiment"),
    ("task.kind", "lowrank-recovery"),
    ("task.in_dim", "32"),
    ("task.out_dim", "32"),
    ("task.hidden", ""),
    ("task.true_rank", "4"),
    ("task.base_drift", "0.5"),
    ("task.noise_std", "0.1"),
    ("task.n_train", "256"),
    ("task.n_eval", "1024"),
    ("task.seed", "0"),
    ("model.hidden", ""),
    ("model.rank", "8"),
    ("model.alpha", "16"),
    ("optim.kind", "mgpo"),
    ("optim.lr", "0.001"),
    ("optim.schedule", "constant"),
    ("optim.warmup_ratio", "0.03"),
    ("optim.beta1", "0.9"),
    ("optim.beta2", "0.999"),
    ("optim.eps", "1e-8"),
    ("optim.weight_decay", "0"),
    ("optim.rho", "0.05"),
    ("optim.apn_beta", "0.9"),
    ("optim.momentum_rule", "optimizer-moment"),
    ("optim.min_momentum_norm", "1e-12"),
    ("optim.min_g_bar", "1e-12"),
    ("train.steps", "1000"),
    ("train.batch_size", "32"),
    ("train.seeds", "0,1,2"),
    ("train.smoothing_window", "25"),
    ("train.sharpness_samples", "20"),
    ("train.checkpoint_every", "0"),
    ("output.dir", "runs"),
];

/// Raw key/value pairs after syntax checks, with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut given: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, found `{line}`"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(unknown_key(key));
            }
            if given.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
        }
        let mut values: BTreeMap<String, String> = KEYS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        values.extend(given);
        Ok(Self { values })
    }

    /// Overrides one key; the key must exist.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(unknown_key(key));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            writeln!(out, "{k} = {}", self.get(k)).unwrap();
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`canonical_text`], ignoring
    /// the output directory.
    ///
    /// [`canonical_text`]: RawConfig::canonical_text
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, _) in KEYS.iter().filter(|(k, _)| *k != "output.dir") {
            h.update(format!("{k} = {}\n", self.get(k)).as_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .fold(String::new(), |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            })
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{raw}` as a number")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::config(key, format!("cannot parse list entry `{s}`")))
            })
            .collect()
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let positive = |key: &str, v: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |key: &str, v: f64| -> Result<f64> {
            if v >= 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(key, format!("must be >= 0, got {v}")))
            }
        };
        let count = |key: &str| -> Result<usize> {
            let v: usize = self.num(key)?;
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
            Ok(v)
        };
        let unit_open = |key: &str| -> Result<f64> {
            let v: f64 = self.num(key)?;
            if (0.0..1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::config(key, format!("must lie in [0, 1), got {v}")))
            }
        };

        let name = self.get("name").to_string();
        if name.is_empty() || name.contains(['/', '\\']) || name.chars().any(char::is_whitespace) {
            return Err(Error::config("name", "must be a nonempty single path component"));
        }

        let kind = match self.get("task.kind") {
            "lowrank-recovery" => TaskKind::LowRankRecovery {
                in_dim: count("task.in_dim")?,
                out_dim: count("task.out_dim")?,
                true_rank: count("task.true_rank")?,
            },
            "teacher-regression" => TaskKind::TeacherRegression {
                in_dim: count("task.in_dim")?,
                hidden: self.list("task.hidden")?,
                out_dim: count("task.out_dim")?,
                base_drift: nonneg("task.base_drift", self.num("task.base_drift")?)?,
            },
            "two-moons" => TaskKind::TwoMoons,
            other => {
                return Err(Error::config(
                    "task.kind",
                    format!("`{other}` is not one of lowrank-recovery, teacher-regression, two-moons"),
                ))
            }
        };
        if let TaskKind::LowRankRecovery { in_dim, out_dim, true_rank } = kind {
            if true_rank > in_dim.min(out_dim) {
                return Err(Error::config(
                    "task.true_rank",
                    format!("must be <= min(in_dim, out_dim) = {}", in_dim.min(out_dim)),
                ));
            }
        }
        if let TaskKind::TeacherRegression { hidden, .. } = &kind {
            if hidden.contains(&0) {
                return Err(Error::config("task.hidden", "widths must be positive"));
            }
        }
        let task = TaskSpec {
            kind,
            noise_std: nonneg("task.noise_std", self.num("task.noise_std")?)?,
            n_train: count("task.n_train")?,
            n_eval: count("task.n_eval")?,
            seed: self.num("task.seed")?,
        };
        if task.kind == TaskKind::TwoMoons && (task.n_train % 2 != 0 || task.n_eval % 2 != 0) {
            return Err(Error::config("task.n_train", "two-moons needs even n_train and n_eval"));
        }

        let hidden: Vec<usize> = self.list("model.hidden")?;
        if hidden.contains(&0) {
            return Err(Error::config("model.hidden", "widths must be positive"));
        }
        if !hidden.is_empty() && task.kind != TaskKind::TwoMoons {
            return Err(Error::config(
                "model.hidden",
                "only two-moons takes model widths; other tasks supply the base network",
            ));
        }
        let model = ModelConfig {
            hidden,
            rank: count("model.rank")?,
            alpha: positive("model.alpha", self.num("model.alpha")?)?,
        };
        for (i, (m, n)) in layer_dims(&task, &model).into_iter().enumerate() {
            if model.rank > m.min(n) {
                return Err(Error::config(
                    "model.rank",
                    format!("{} exceeds min(m, n) = {} of layer {i}", model.rank, m.min(n)),
                ));
            }
        }
        if model.alpha == model.rank as f64 {
            log::info!("model.alpha equals model.rank (the r = alpha figure convention)");
        }

        let kind_name = self.get("optim.kind");
        let optim_kind = OptimizerKind::parse(kind_name).ok_or_else(|| {
            Error::config(
                "optim.kind",
                format!("`{kind_name}` is not one of adamw, mgpo, mgpo-no-apn, sam, noise"),
            )
        })?;
        let schedule = match self.get("optim.schedule") {
            "constant" => LrSchedule::Constant,
            "cosine-warmup" => LrSchedule::CosineWarmup {
                warmup_ratio: {
                    let r: f64 = self.num("optim.warmup_ratio")?;
                    if !(0.0..1.0).contains(&r) {
                        return Err(Error::config("optim.warmup_ratio", "must lie in [0, 1)"));
                    }
                    r
                },
            },
            other => {
                return Err(Error::config(
                    "optim.schedule",
                    format!("`{other}` is not one of constant, cosine-warmup"),
                ))
            }
        };
        let rho: f64 = self.num("optim.rho")?;
        let rho = match optim_kind {
            OptimizerKind::Sam | OptimizerKind::Noise => positive("optim.rho", rho)?,
            _ => nonneg("optim.rho", rho)?,
        };
        let apn_beta: f64 = self.num("optim.apn_beta")?;
        if !(0.0..=1.0).contains(&apn_beta) {
            return Err(Error::config("optim.apn_beta", "must lie in [0, 1]"));
        }
        let rule = self.get("optim.momentum_rule");
        let optim = OptimConfig {
            kind: optim_kind,
            lr: positive("optim.lr", self.num("optim.lr")?)?,
            schedule,
            beta1: unit_open("optim.beta1")?,
            beta2: unit_open("optim.beta2")?,
            eps: positive("optim.eps", self.num("optim.eps")?)?,
            weight_decay: nonneg("optim.weight_decay", self.num("optim.weight_decay")?)?,
            rho,
            apn_beta,
            momentum_rule: MomentumRule::parse(rule).ok_or_else(|| {
                Error::config(
                    "optim.momentum_rule",
                    format!("`{rule}` is not one of optimizer-moment, heavy-ball"),
                )
            })?,
            min_momentum_norm: positive("optim.min_momentum_norm", self.num("optim.min_momentum_norm")?)?,
            min_g_bar: positive("optim.min_g_bar", self.num("optim.min_g_bar")?)?,
        };

        let seeds: Vec<u64> = self.list("train.seeds")?;
        if seeds.is_empty() {
            return Err(Error::config("train.seeds", "needs at least one seed"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::config("train.seeds", "seeds must be distinct"));
        }
        let steps = count("train.steps")?;
        if steps < 2 {
            return Err(Error::config("train.steps", "must be at least 2"));
        }
        let train = TrainConfig {
            steps,
            batch_size: count("train.batch_size")?,
            seeds,
            smoothing_window: count("train.smoothing_window")?,
            sharpness_samples: count("train.sharpness_samples")?,
            checkpoint_every: self.num("train.checkpoint_every")?,
        };

        let out = self.get("output.dir");
        if out.is_empty() {
            return Err(Error::config("output.dir", "must not be empty"));
        }
        Ok(ExperimentConfig {
            name,
            task,
            model,
            optim,
            train,
            output_dir: PathBuf::from(out),
        })
    }
}

fn unknown_key(key: &str) -> Error {
    let best = KEYS
        .iter()
        .map(|(k, _)| (strsim::levenshtein(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3);
    match best {
        Some((_, k)) => Error::config(key, format!("unknown key (did you mean `{k}`?)")),
        None => Error::config(key, "unknown key"),
    }
}

/// `(out, in)` of every student layer.
pub fn layer_dims(task: &TaskSpec, model: &ModelConfig) -> Vec<(usize, usize)> {
    let dims: Vec<usize> = match &task.kind {
        TaskKind::LowRankRecovery { in_dim, out_dim, .. } => vec![*in_dim, *out_dim],
        TaskKind::TeacherRegression {
            in_dim,
            hidden,
            out_dim,
            ..
        } => std::iter::once(*in_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(*out_dim))
            .collect(),
        TaskKind::TwoMoons => std::iter::once(2)
            .chain(model.hidden.iter().copied())
            .chain(std::iter::once(2))
            .collect(),
    };
    dims.windows(2).map(|w| (w[1], w[0])).collect()
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<(Self, RawConfig)> {
        let raw = RawConfig::parse(text)?;
        Ok((raw.build()?, raw))
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<(ExperimentConfig, RawConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_text(&text)
}
