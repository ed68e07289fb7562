//! LoRA-adapted linear layers and a small tanh MLP built from them.

mod container;
mod lora;
mod mlp;
mod params;

pub use container::{f64_to_hex, hex_to_f64, TensorContainer, CONTAINER_VERSION};
pub use lora::{lora_forward, lora_init, merge_weights, LoraLinear};
pub use mlp::{backward, forward_loss, param_axpy, ForwardCache, LossKind, MlpModel};
pub use params::{Factor, ParamKey, ParamVector};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

impl MlpModel {
    /// Serializes every layer (frozen and trainable tensors, rank, alpha).
    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.set_meta("model.layers", self.layers().len())?;
        for (i, layer) in self.layers().iter().enumerate() {
            c.set_meta(&format!("layer{i}.rank"), layer.rank())?;
            c.set_f64(&format!("layer{i}.alpha"), layer.alpha())?;
            c.push_tensor(&format!("layer{i}.w0"), layer.w0().clone())?;
            c.push_tensor(&format!("layer{i}.a"), layer.a().clone())?;
            c.push_tensor(&format!("layer{i}.b"), layer.b().clone())?;
            if let Some(bias) = layer.bias() {
                c.push_tensor(
                    &format!("layer{i}.bias"),
                    Matrix::new(1, bias.len(), bias.to_vec())?,
                )?;
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let n: usize = c.parse_meta("model.layers")?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let bias_name = format!("layer{i}.bias");
            let bias = c
                .tensor_names()
                .any(|t| t == bias_name)
                .then(|| c.tensor(&bias_name).map(|m| m.data().to_vec()))
                .transpose()?;
            let layer = LoraLinear::from_parts(
                c.tensor(&format!("layer{i}.w0"))?.clone(),
                bias,
                c.tensor(&format!("layer{i}.a"))?.clone(),
                c.tensor(&format!("layer{i}.b"))?.clone(),
                c.get_f64(&format!("layer{i}.alpha"))?,
            )?;
            let rank: usize = c.parse_meta(&format!("layer{i}.rank"))?;
            if rank != layer.rank() {
                return Err(Error::Format(format!(
                    "layer {i}: stored rank {rank} disagrees with factor shapes"
                )));
            }
            layers.push(layer);
        }
        MlpModel::new(layers)
    }
}

impl ParamVector {
    /// Stores each tensor under its key name with `prefix` prepended.
    pub fn write_into(&self, c: &mut TensorContainer, prefix: &str) -> Result<()> {
        for (k, m) in self.iter() {
            c.push_tensor(&format!("{prefix}{k}"), m.clone())?;
        }
        Ok(())
    }

    /// Reads back a vector with the same layout as `template`.
    pub fn read_from(template: &ParamVector, c: &TensorContainer, prefix: &str) -> Result<Self> {
        let tensors = template
            .keys()
            .map(|k| c.tensor(&format!("{prefix}{k}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        template
            .with_tensors(tensors)
            .map_err(|_| Error::Format(format!("tensors under `{prefix}` have the wrong shapes")))
    }
}
