//! Deterministic synthetic problems.
//!
//! Every generator is a pure function of its [`TaskSpec`]: the seed drives
//! a fixed sequence of forked [`Rng`] streams, so datasets are byte-identical
//! across runs and platforms.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::adapters::{LoraLinear, LossKind, MlpModel};
use crate::error::{Error, Result};
use crate::numcore::{normal_fill, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskKind {
    /// Targets from a random tanh teacher network. The student base is the
    /// teacher with every weight shifted by `base_drift / √fan_in` Gaussian noise.
    TeacherRegression {
        in_dim: usize,
        hidden: Vec<usize>,
        out_dim: usize,
        base_drift: f64,
    },
    /// Two interleaved half circles, one-hot labels.
    TwoMoons,
    /// Linear targets `x·(W₀ + Δ)ᵀ` with `rank(Δ) == true_rank`; `W₀` is
    /// handed to the student as its frozen base.
    LowRankRecovery {
        in_dim: usize,
        out_dim: usize,
        true_rank: usize,
    },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::TeacherRegression { .. } => "teacher-regression",
            TaskKind::TwoMoons => "two-moons",
            TaskKind::LowRankRecovery { .. } => "lowrank-recovery",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl TaskSpec {
    /// The rank-sweep probe: 32×32 base, rank-4 shift, 256 training rows.
    pub fn lowrank_preset() -> Self {
        Self {
            kind: TaskKind::LowRankRecovery {
                in_dim: 32,
                out_dim: 32,
                true_rank: 4,
            },
            noise_std: 0.1,
            n_train: 256,
            n_eval: 1024,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::usage("noise_std must be finite and nonnegative"));
        }
        if self.n_train == 0 || self.n_eval == 0 {
            return Err(Error::usage("n_train and n_eval must be positive"));
        }
        match &self.kind {
            TaskKind::TeacherRegression {
                in_dim,
                hidden,
                out_dim,
                base_drift,
            } => {
                if *in_dim == 0 || *out_dim == 0 || hidden.contains(&0) {
                    return Err(Error::usage("teacher dimensions must be positive"));
                }
                if !(*base_drift >= 0.0 && base_drift.is_finite()) {
                    return Err(Error::usage("base_drift must be finite and nonnegative"));
                }
            }
            TaskKind::TwoMoons => {
                if self.n_train % 2 != 0 || self.n_eval % 2 != 0 {
                    return Err(Error::usage("two-moons needs even n_train and n_eval"));
                }
            }
            TaskKind::LowRankRecovery {
                in_dim,
                out_dim,
                true_rank,
            } => {
                if *in_dim == 0 || *out_dim == 0 {
                    return Err(Error::usage("dimensions must be positive"));
                }
                if *true_rank == 0 || *true_rank > (*in_dim).min(*out_dim) {
                    return Err(Error::usage(format!(
                        "true_rank {true_rank} outside 1..={}",
                        in_dim.min(out_dim)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inputs, targets and the loss they are scored with.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub loss: LossKind,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix, loss: LossKind) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: inputs.shape(),
                rhs: targets.shape(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            loss,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select_rows(indices)?,
            self.targets.select_rows(indices)?,
            self.loss,
        )
    }

    /// Mean loss of `model` over the whole dataset.
    pub fn loss_of(&self, model: &MlpModel) -> Result<f64> {
        model
            .forward_loss(&self.inputs, &self.targets, self.loss)
            .map(|(l, _)| l)
    }

    /// Fraction of rows whose arg-max output matches the arg-max target.
    pub fn accuracy_of(&self, model: &MlpModel) -> Result<f64> {
        let out = model.predict(&self.inputs)?;
        let argmax = |row: &[f64]| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        };
        let hits = (0..self.len())
            .filter(|&r| argmax(out.row(r)) == argmax(self.targets.row(r)))
            .count();
        Ok(hits as f64 / self.len() as f64)
    }

    /// Header `x0..x{n-1},y0..y{k-1}`, then one row per sample.
    pub fn to_csv(&self) -> String {
        let n = self.inputs.cols();
        let k = self.targets.cols();
        let mut out = String::new();
        let header: Vec<String> = (0..n)
            .map(|i| format!("x{i}"))
            .chain((0..k).map(|j| format!("y{j}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for r in 0..self.len() {
            let mut first = true;
            for v in self.inputs.row(r).iter().chain(self.targets.row(r)) {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Frozen base layer handed to the student model: weight and optional bias.
pub type BaseLayer = (Matrix, Option<Vec<f64>>);

pub struct TeacherTask {
    pub train: Dataset,
    pub eval: Dataset,
    pub teacher: MlpModel,
    pub student_base: Vec<BaseLayer>,
}

pub struct LowRankTask {
    pub train: Dataset,
    pub eval: Dataset,
    pub true_rank: usize,
    pub base: Matrix,
    pub delta: Matrix,
}

pub struct TwoMoonsTask {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Any task, in the shape the training harness consumes.
pub struct TaskData {
    pub train: Dataset,
    pub eval: Dataset,
    /// Frozen base for the student, when the task prescribes one.
    pub base: Option<Vec<BaseLayer>>,
}

pub fn build_task(spec: &TaskSpec) -> Result<TaskData> {
    Ok(match &spec.kind {
        TaskKind::TeacherRegression { .. } => {
            let t = make_teacher_regression(spec)?;
            TaskData {
                train: t.train,
                eval: t.eval,
                base: Some(t.student_base),
            }
        }
        TaskKind::LowRankRecovery { .. } => {
            let t = make_lowrank_recovery(spec)?;
            TaskData {
                train: t.train,
                eval: t.eval,
                base: Some(vec![(t.base, None)]),
            }
        }
        TaskKind::TwoMoons => {
            let t = make_two_moons(spec)?;
            TaskData {
                train: t.train,
                eval: t.eval,
                base: None,
            }
        }
    })
}

fn add_noise(rng: &mut Rng, m: &mut Matrix, std: f64) {
    if std > 0.0 {
        for v in m.data_mut() {
            *v += std * rng.standard_normal();
        }
    }
}

pub fn make_teacher_regression(spec: &TaskSpec) -> Result<TeacherTask> {
    spec.validate()?;
    let TaskKind::TeacherRegression {
        in_dim,
        hidden,
        out_dim,
        base_drift,
    } = &spec.kind
    else {
        return Err(Error::usage("make_teacher_regression needs a teacher-regression spec"));
    };
    let mut root = Rng::new(spec.seed);
    let mut weight_rng = root.fork();
    let mut train_rng = root.fork();
    let mut eval_rng = root.fork();
    let mut drift_rng = root.fork();

    let dims: Vec<usize> = std::iter::once(*in_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(*out_dim))
        .collect();
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut student_base = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (n, m) = (w[0], w[1]);
        let std = 1.0 / (n as f64).sqrt();
        let w0 = normal_fill(&mut weight_rng, m, n, 0.0, std)?;
        let drift = normal_fill(&mut drift_rng, m, n, 0.0, base_drift * std)?;
        student_base.push((w0.add(&drift)?, None));
        layers.push(LoraLinear::init(&mut weight_rng, w0, None, 1, 1.0)?);
    }
    let teacher = MlpModel::new(layers)?;

    let sample = |rng: &mut Rng, n: usize| -> Result<Dataset> {
        let x = normal_fill(rng, n, *in_dim, 0.0, 1.0)?;
        let mut y = teacher.predict(&x)?;
        add_noise(rng, &mut y, spec.noise_std);
        Dataset::new(x, y, LossKind::Mse)
    };
    let train = sample(&mut train_rng, spec.n_train)?;
    let eval = sample(&mut eval_rng, spec.n_eval)?;
    Ok(TeacherTask {
        train,
        eval,
        teacher,
        student_base,
    })
}

pub fn make_lowrank_recovery(spec: &TaskSpec) -> Result<LowRankTask> {
    spec.validate()?;
    let TaskKind::LowRankRecovery {
        in_dim,
        out_dim,
        true_rank,
    } = spec.kind
    else {
        return Err(Error::usage("make_lowrank_recovery needs a lowrank-recovery spec"));
    };
    let mut root = Rng::new(spec.seed);
    let mut weight_rng = root.fork();
    let mut train_rng = root.fork();
    let mut eval_rng = root.fork();

    let base = normal_fill(&mut weight_rng, out_dim, in_dim, 0.0, 1.0 / (in_dim as f64).sqrt())?;
    let u = normal_fill(&mut weight_rng, out_dim, true_rank, 0.0, 1.0)?;
    let v = normal_fill(&mut weight_rng, true_rank, in_dim, 0.0, 1.0)?;
    // Entries of Δ get the same variance as the base, 1/in_dim.
    let delta = u
        .matmul(&v)?
        .scale(1.0 / ((true_rank * in_dim) as f64).sqrt());
    let target_weight = base.add(&delta)?;

    let sample = |rng: &mut Rng, n: usize| -> Result<Dataset> {
        let x = normal_fill(rng, n, in_dim, 0.0, 1.0)?;
        let mut y = x.matmul_t(&target_weight)?;
        add_noise(rng, &mut y, spec.noise_std);
        Dataset::new(x, y, LossKind::Mse)
    };
    Ok(LowRankTask {
        train: sample(&mut train_rng, spec.n_train)?,
        eval: sample(&mut eval_rng, spec.n_eval)?,
        true_rank,
        base,
        delta,
    })
}

pub fn make_two_moons(spec: &TaskSpec) -> Result<TwoMoonsTask> {
    spec.validate()?;
    if spec.kind != TaskKind::TwoMoons {
        return Err(Error::usage("make_two_moons needs a two-moons spec"));
    }
    let mut root = Rng::new(spec.seed);
    let mut train_rng = root.fork();
    let mut eval_rng = root.fork();

    let sample = |rng: &mut Rng, n: usize| -> Result<Dataset> {
        let half = n / 2;
        let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
        for class in 0..2 {
            for _ in 0..half {
                let t = PI * rng.uniform();
                let (x, y) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let nx = spec.noise_std * rng.standard_normal();
                let ny = spec.noise_std * rng.standard_normal();
                rows.push(([x + nx, y + ny], class));
            }
        }
        rows.shuffle(rng);
        let mut inputs = Matrix::zeros(n, 2);
        let mut targets = Matrix::zeros(n, 2);
        for (r, (p, class)) in rows.iter().enumerate() {
            inputs.set(r, 0, p[0]);
            inputs.set(r, 1, p[1]);
            targets.set(r, *class, 1.0);
        }
        Dataset::new(inputs, targets, LossKind::SoftmaxCrossEntropy)
    };
    Ok(TwoMoonsTask {
        train: sample(&mut train_rng, spec.n_train)?,
        eval: sample(&mut eval_rng, spec.n_eval)?,
    })
}

/// Serializable position of a [`BatchStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchStreamState {
    pub base_seed: u64,
    pub epoch: u64,
    pub cursor: usize,
}

/// Endless stream of shuffled mini-batch index sets.
///
/// Each epoch is a fresh permutation derived from `(base_seed, epoch)`; the
/// last batch of an epoch may be short.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    state: BatchStreamState,
    perm: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, base_seed: u64) -> Result<Self> {
        Self::from_state(
            n,
            batch_size,
            BatchStreamState {
                base_seed,
                epoch: 0,
                cursor: 0,
            },
        )
    }

    pub fn from_state(n: usize, batch_size: usize, state: BatchStreamState) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::usage("batch_size must be at least 1"));
        }
        if n == 0 {
            return Err(Error::usage("cannot batch an empty dataset"));
        }
        if state.cursor >= n {
            return Err(Error::usage("batch stream cursor past end of epoch"));
        }
        Ok(Self {
            n,
            batch_size,
            perm: epoch_permutation(n, state.base_seed, state.epoch),
            state,
        })
    }

    pub fn state(&self) -> BatchStreamState {
        self.state
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let start = self.state.cursor;
        let end = (start + self.batch_size).min(self.n);
        let out = self.perm[start..end].to_vec();
        if end == self.n {
            self.state.epoch += 1;
            self.state.cursor = 0;
            self.perm = epoch_permutation(self.n, self.state.base_seed, self.state.epoch);
        } else {
            self.state.cursor = end;
        }
        out
    }

    pub fn next_batch(&mut self, data: &Dataset) -> Result<Dataset> {
        let idx = self.next_indices();
        data.select(&idx)
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_indices())
    }
}

fn epoch_permutation(n: usize, base_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = Rng::new(base_seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Batch stream over `dataset` whose shuffles are keyed by a draw from `rng`.
pub fn batches(dataset: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<BatchStream> {
    use rand::RngCore;
    BatchStream::new(dataset.len(), batch_size, rng.next_u64())
}
