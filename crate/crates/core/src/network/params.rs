use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{architecture, LayerKind, LayerSpec, ParamInit};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::tensor::{
    bilinear_upsample_kernel, decode_checkpoint, encode_checkpoint, Scalar, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub spec: LayerSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameters of one network, one [`Layer`] per architecture entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    config: NetConfig,
    layers: Vec<Layer<T>>,
    index: HashMap<String, usize>,
}

/// Stable per-layer seed so a layer's initial weights do not depend on
/// which other layers exist.
fn layer_seed(seed: u64, name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for byte in name.bytes() {
        h = (h ^ byte as u64).wrapping_mul(0x100_0000_01b3);
    }
    seed ^ h
}

fn init_layer<T: Scalar>(spec: LayerSpec, seed: u64) -> Layer<T> {
    let shape = spec.weight_shape();
    let mut weight = match spec.init {
        ParamInit::HeNormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, &spec.name));
            let fan_in = spec.conv.kh * spec.conv.kw * spec.conv.c_in;
            crate::tensor::init::he_normal(&shape, fan_in, &mut rng)
        }
        ParamInit::Zero => Tensor::zeros(&shape),
        ParamInit::Bilinear => bilinear_upsample_kernel(spec.conv.c_out, spec.conv.kh, spec.conv.stride.0),
    };
    weight.set_requires_grad(true);
    let bias = Tensor::zeros(&[spec.conv.c_out]).with_requires_grad(true);
    Layer { spec, weight, bias }
}

/// Freshly initialized `f32` parameters for `config`.
pub fn build_model(config: &NetConfig) -> Result<ModelParams<f32>> {
    ModelParams::new(config)
}

impl<T: Scalar> ModelParams<T> {
    /// He-normal convolutions, zero-initialized score layers and bilinear
    /// transposed convolutions; deterministic in `config.seed`.
    pub fn new(config: &NetConfig) -> Result<Self> {
        let layers = architecture(config)?
            .into_iter()
            .map(|spec| init_layer(spec, config.seed))
            .collect();
        Ok(Self::from_layers(*config, layers))
    }

    fn from_layers(config: NetConfig, layers: Vec<Layer<T>>) -> Self {
        let index = layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.spec.name.clone(), i))
            .collect();
        Self { config, layers, index }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.index.get(name).map(|&i| &self.layers[i])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer<T>> {
        self.index.get(name).map(|&i| &mut self.layers[i])
    }

    pub(crate) fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("{} network has no layer {name}", self.config.strategy)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// `(name.weight | name.bias, tensor)` in layer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    (format!("{}.weight", l.spec.name), &l.weight),
                    (format!("{}.bias", l.spec.name), &l.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                spec: l.spec.clone(),
                weight: l.weight.cast().with_requires_grad(l.weight.requires_grad()),
                bias: l.bias.cast().with_requires_grad(l.bias.requires_grad()),
            })
            .collect();
        ModelParams::from_layers(self.config, layers)
    }
}

impl ModelParams<f32> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let named = self.named_tensors();
        encode_checkpoint(named.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Rebuilds parameters for `config` from checkpoint bytes; every layer
    /// must be present with its exact shape and nothing else may be.
    pub fn from_checkpoint_bytes(config: &NetConfig, bytes: &[u8]) -> Result<Self> {
        let mut model = Self::new(config)?;
        let mut records: HashMap<String, Tensor<f32>> = decode_checkpoint(bytes)?.into_iter().collect();
        for layer in &mut model.layers {
            for (suffix, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let key = format!("{}.{suffix}", layer.spec.name);
                let tensor = records
                    .remove(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                if tensor.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{key} has shape {:?}, the {} network expects {:?}",
                        tensor.shape(),
                        config.strategy,
                        slot.shape()
                    )));
                }
                *slot = tensor.with_requires_grad(true);
            }
        }
        if let Some(extra) = records.keys().min() {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor {extra} for the {} network",
                config.strategy
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(config: &NetConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_checkpoint_bytes(config, &bytes).map_err(|e| Error::format(path, e.to_string()))
    }
}

impl<T: Scalar> Layer<T> {
    pub fn is_transposed(&self) -> bool {
        self.spec.kind == LayerKind::TransposedConv
    }
}
