#![allow(dead_code)]

use lora_mgpo::adapters::{LoraLinear, LossKind, MlpModel};
use lora_mgpo::numcore::{normal_fill, Matrix, Rng};
use lora_mgpo::optimizers::{AdamWHyper, Method, Optimizer};
use lora_mgpo::tasks::{make_lowrank_recovery, BatchStream, Dataset, LowRankTask, TaskSpec};

/// A model with every tensor random, including `B`, so no gradient is
/// trivially zero. `dims` lists widths from input to output.
pub fn random_model(rng: &mut Rng, dims: &[usize], rank: usize, alpha: f64) -> MlpModel {
    let layers = dims
        .windows(2)
        .map(|w| {
            let (n, m) = (w[0], w[1]);
            let r = rank.min(m).min(n);
            let w0 = normal_fill(rng, m, n, 0.0, 1.0 / (n as f64).sqrt()).unwrap();
            let bias = normal_fill(rng, 1, m, 0.0, 0.3).unwrap().into_data();
            let a = normal_fill(rng, r, n, 0.0, 0.5).unwrap();
            let b = normal_fill(rng, m, r, 0.0, 0.5).unwrap();
            LoraLinear::from_parts(w0, Some(bias), a, b, alpha).unwrap()
        })
        .collect();
    MlpModel::new(layers).unwrap()
}

pub fn random_batch(rng: &mut Rng, n: usize, in_dim: usize, out_dim: usize, loss: LossKind) -> Dataset {
    let inputs = normal_fill(rng, n, in_dim, 0.0, 1.0).unwrap();
    let targets = match loss {
        LossKind::Mse => normal_fill(rng, n, out_dim, 0.0, 1.0).unwrap(),
        LossKind::SoftmaxCrossEntropy => {
            let mut t = Matrix::zeros(n, out_dim);
            for r in 0..n {
                let c = (rng.uniform() * out_dim as f64) as usize;
                t.set(r, c.min(out_dim - 1), 1.0);
            }
            t
        }
    };
    Dataset::new(inputs, targets, loss).unwrap()
}

/// Plain nested-loop reimplementation of the network and both losses,
/// sharing no code with the library's matrix routines.
#[derive(Clone, Debug)]
pub struct NaiveLayer {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub scale: f64,
    pub w0: Vec<f64>,
    pub bias: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub fn naive_layers(model: &MlpModel) -> Vec<NaiveLayer> {
    model
        .layers()
        .iter()
        .map(|l| NaiveLayer {
            m: l.out_dim(),
            n: l.in_dim(),
            r: l.rank(),
            scale: l.alpha() / l.rank() as f64,
            w0: l.w0().data().to_vec(),
            bias: l.bias().map_or(vec![0.0; l.out_dim()], <[f64]>::to_vec),
            a: l.a().data().to_vec(),
            b: l.b().data().to_vec(),
        })
        .collect()
}

pub fn naive_loss(layers: &[NaiveLayer], data: &Dataset) -> f64 {
    let rows = data.inputs.rows();
    let mut total = 0.0;
    for row in 0..rows {
        let mut h: Vec<f64> = data.inputs.row(row).to_vec();
        for (li, l) in layers.iter().enumerate() {
            let mut z = vec![0.0; l.m];
            for i in 0..l.m {
                let mut acc = l.bias[i];
                for j in 0..l.n {
                    let mut delta = 0.0;
                    for k in 0..l.r {
                        delta += l.b[i * l.r + k] * l.a[k * l.n + j];
                    }
                    acc += (l.w0[i * l.n + j] + l.scale * delta) * h[j];
                }
                z[i] = acc;
            }
            h = if li + 1 < layers.len() {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z
            };
        }
        let t = data.targets.row(row);
        match data.loss {
            LossKind::Mse => {
                for (y, t) in h.iter().zip(t) {
                    total += (y - t) * (y - t) / h.len() as f64;
                }
            }
            LossKind::SoftmaxCrossEntropy => {
                let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + h.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for (z, t) in h.iter().zip(t) {
                    total += t * (lse - z);
                }
            }
        }
    }
    total / rows as f64
}

/// Central finite differences of [`naive_loss`] for every adapter entry,
/// in the library's canonical order (per layer: `A` then `B`).
pub fn naive_fd_gradient(layers: &[NaiveLayer], data: &Dataset, h: f64) -> Vec<f64> {
    let mut work = layers.to_vec();
    let mut out = Vec::new();
    for li in 0..layers.len() {
        for factor in 0..2 {
            let len = if factor == 0 { work[li].a.len() } else { work[li].b.len() };
            for idx in 0..len {
                fn entry(w: &mut [NaiveLayer], li: usize, factor: usize, idx: usize) -> &mut f64 {
                    if factor == 0 {
                        &mut w[li].a[idx]
                    } else {
                        &mut w[li].b[idx]
                    }
                }
                let orig = *entry(&mut work, li, factor, idx);
                *entry(&mut work, li, factor, idx) = orig + h;
                let up = naive_loss(&work, data);
                *entry(&mut work, li, factor, idx) = orig - h;
                let down = naive_loss(&work, data);
                *entry(&mut work, li, factor, idx) = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// The rank-32 adapter on the shipped low-rank preset, built the way the
/// harness does for `seed`.
pub fn lowrank_setup(seed: u64, rank: usize) -> (LowRankTask, MlpModel) {
    let task = make_lowrank_recovery(&TaskSpec::lowrank_preset()).unwrap();
    let mut init = Rng::new(seed).fork();
    let layer = LoraLinear::init(&mut init, task.base.clone(), None, rank, rank as f64).unwrap();
    (task, MlpModel::new(vec![layer]).unwrap())
}

/// Runs `steps` optimizer steps on mini-batches and returns the reports' losses.
pub fn train(
    model: &mut MlpModel,
    data: &Dataset,
    method: Method,
    lr: f64,
    steps: usize,
    seed: u64,
) -> (Optimizer, Vec<f64>) {
    let hyper = AdamWHyper { lr, ..AdamWHyper::default() };
    let mut opt = Optimizer::new(method, model, hyper, 0.9, seed ^ 0xABCD).unwrap();
    let mut stream = BatchStream::new(data.len(), 32, seed).unwrap();
    let losses = (0..steps)
        .map(|_| {
            let batch = stream.next_batch(data).unwrap();
            opt.step(model, &batch).unwrap().loss
        })
        .collect();
    (opt, losses)
}
