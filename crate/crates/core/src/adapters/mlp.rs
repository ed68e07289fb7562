//! Feed-forward stack of LoRA layers with hand-derived gradients.
//!
//! Hidden layers use `tanh`; the last layer is linear. Gradients are taken
//! with respect to every adapter factor only; base weights and biases never
//! receive one.

use std::cell::Cell;

use super::lora::LoraLinear;
use super::params::{Factor, ParamKey, ParamVector};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Mean of squared errors over every output element.
    Mse,
    /// Row-mean of `−Σ t·log softmax(z)`; targets are class distributions.
    SoftmaxCrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::SoftmaxCrossEntropy => "softmax-cross-entropy",
        }
    }
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer; entry 0 is the batch input, later ones are tanh outputs.
    inputs: Vec<Matrix>,
    /// `X·Aᵀ` per layer.
    xa: Vec<Matrix>,
    /// `dL/dz` for the final pre-activation.
    output_grad: Matrix,
    outputs: Matrix,
}

impl ForwardCache {
    /// Raw network outputs (logits or regression values) for the batch.
    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    layers: Vec<LoraLinear>,
    version: u64,
    grad_evals: Cell<u64>,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl MlpModel {
    pub fn new(layers: Vec<LoraLinear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("a model needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::usage(format!(
                    "layer {i} outputs {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            version: 0,
            grad_evals: Cell::new(0),
        })
    }

    pub fn layers(&self) -> &[LoraLinear] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Bumped on every parameter mutation; caches remember it.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of backward passes run against this model so far.
    pub fn grad_evals(&self) -> u64 {
        self.grad_evals.get()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, |layer, h| layer.forward(h))
    }

    /// Predictions of the frozen base network with every adapter removed.
    pub fn predict_base(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, |layer, h| layer.forward_base(h))
    }

    fn run(&self, x: &Matrix, f: impl Fn(&LoraLinear, &Matrix) -> Result<Matrix>) -> Result<Matrix> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = f(layer, &h)?;
            if i < last {
                h = h.map(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Mean loss over the batch plus the activations needed by [`backward`].
    ///
    /// [`backward`]: MlpModel::backward
    pub fn forward_loss(
        &self,
        inputs: &Matrix,
        targets: &Matrix,
        kind: LossKind,
    ) -> Result<(f64, ForwardCache)> {
        if inputs.rows() != targets.rows() || targets.cols() != self.out_dim() {
            return Err(Error::Shape {
                op: "forward_loss targets",
                lhs: (inputs.rows(), self.out_dim()),
                rhs: targets.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut xas = Vec::with_capacity(self.layers.len());
        let mut h = inputs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (z, xa) = layer.forward_with_xa(&h)?;
            if !z.is_finite() {
                return Err(Error::numeric(format!("activations of layer {i}")));
            }
            layer_inputs.push(h);
            xas.push(xa);
            h = if i < last { z.map(f64::tanh) } else { z };
        }
        let (loss, output_grad) = loss_and_grad(&h, targets, kind);
        if !loss.is_finite() {
            return Err(Error::numeric("loss"));
        }
        Ok((
            loss,
            ForwardCache {
                version: self.version,
                inputs: layer_inputs,
                xa: xas,
                output_grad,
                outputs: h,
            },
        ))
    }

    /// Exact gradient of the cached loss with respect to every `A` and `B`.
    pub fn backward(&self, cache: &ForwardCache) -> Result<ParamVector> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::usage(
                "forward cache does not belong to the current model parameters",
            ));
        }
        self.grad_evals.set(self.grad_evals.get() + 1);
        let mut grads: Vec<(ParamKey, Matrix)> = Vec::with_capacity(2 * self.layers.len());
        let mut g = cache.output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let s = layer.scaling();
            let x = &cache.inputs[l];
            let gb = g.matmul(&layer.b)?;
            let mut d_b = g.t_matmul(&cache.xa[l])?;
            d_b.scale_in_place(s);
            let mut d_a = gb.t_matmul(x)?;
            d_a.scale_in_place(s);
            grads.push((ParamKey { layer: l, factor: Factor::B }, d_b));
            grads.push((ParamKey { layer: l, factor: Factor::A }, d_a));
            if l > 0 {
                let mut dx = g.matmul(layer.w0())?;
                dx.axpy(s, &gb.matmul(&layer.a)?)?;
                // x is tanh output of the previous layer: d tanh = 1 - tanh².
                let dtanh = x.map(|t| 1.0 - t * t);
                g = dx.hadamard(&dtanh)?;
            }
        }
        grads.reverse();
        let grads = ParamVector::new(grads)?;
        if !grads.is_finite() {
            return Err(Error::numeric("gradients"));
        }
        Ok(grads)
    }

    pub fn params(&self) -> ParamVector {
        let mut entries = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            entries.push((ParamKey { layer: l, factor: Factor::A }, layer.a.clone()));
            entries.push((ParamKey { layer: l, factor: Factor::B }, layer.b.clone()));
        }
        ParamVector::new(entries).expect("layers produce canonical keys")
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|l| [l.a.shape(), l.b.shape()])
            .collect()
    }

    fn factor_mut(&mut self, key: ParamKey) -> &mut Matrix {
        let layer = &mut self.layers[key.layer];
        match key.factor {
            Factor::A => &mut layer.a,
            Factor::B => &mut layer.b,
        }
    }

    fn check_layout(&self, v: &ParamVector, what: &str) -> Result<()> {
        let ok = v.len() == 2 * self.layers.len()
            && v.iter().zip(self.param_shapes()).enumerate().all(|(i, ((k, m), shape))| {
                k.layer == i / 2
                    && k.factor == if i % 2 == 0 { Factor::A } else { Factor::B }
                    && m.shape() == shape
            });
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "{what}: vector is not aligned with the model's trainable factors"
            )))
        }
    }

    /// Every trainable factor `+= scale * direction`.
    pub fn param_axpy(&mut self, direction: &ParamVector, scale: f64) -> Result<()> {
        self.check_layout(direction, "param_axpy")?;
        for (key, d) in direction.iter() {
            self.factor_mut(*key).axpy(scale, d)?;
        }
        self.version += 1;
        Ok(())
    }

    /// Overwrites every trainable factor, e.g. to restore a snapshot from [`params`].
    ///
    /// [`params`]: MlpModel::params
    pub fn set_params(&mut self, values: &ParamVector) -> Result<()> {
        self.check_layout(values, "set_params")?;
        for (key, v) in values.iter() {
            self.factor_mut(*key).data_mut().copy_from_slice(v.data());
        }
        self.version += 1;
        Ok(())
    }

    /// Applies `f(param, index)` to each trainable factor in canonical order.
    pub(crate) fn update_params(&mut self, mut f: impl FnMut(usize, &mut Matrix)) {
        let n = self.layers.len();
        for l in 0..n {
            f(2 * l, &mut self.layers[l].a);
            f(2 * l + 1, &mut self.layers[l].b);
        }
        self.version += 1;
    }
}

fn loss_and_grad(outputs: &Matrix, targets: &Matrix, kind: LossKind) -> (f64, Matrix) {
    let (n, k) = outputs.shape();
    match kind {
        LossKind::Mse => {
            let diff = outputs.sub(targets).expect("shapes checked");
            let denom = (n * k) as f64;
            let loss = diff.sum_squares() / denom;
            (loss, diff.scale(2.0 / denom))
        }
        LossKind::SoftmaxCrossEntropy => {
            let mut grad = Matrix::zeros(n, k);
            let mut total = 0.0;
            for r in 0..n {
                let z = outputs.row(r);
                let t = targets.row(r);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let t_sum: f64 = t.iter().sum();
                for j in 0..k {
                    let log_p = z[j] - lse;
                    total -= t[j] * log_p;
                    grad.set(r, j, (log_p.exp() * t_sum - t[j]) / n as f64);
                }
            }
            (total / n as f64, grad)
        }
    }
}

/// Free-function form of [`MlpModel::forward_loss`].
pub fn forward_loss(
    model: &MlpModel,
    inputs: &Matrix,
    targets: &Matrix,
    kind: LossKind,
) -> Result<(f64, ForwardCache)> {
    model.forward_loss(inputs, targets, kind)
}

/// Free-function form of [`MlpModel::backward`].
pub fn backward(model: &MlpModel, cache: &ForwardCache) -> Result<ParamVector> {
    model.backward(cache)
}

/// Free-function form of [`MlpModel::param_axpy`].
pub fn param_axpy(model: &mut MlpModel, direction: &ParamVector, scale: f64) -> Result<()> {
    model.param_axpy(direction, scale)
}
