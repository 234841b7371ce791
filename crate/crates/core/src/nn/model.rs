use super::layers::{add_l1_subgradient, l1_penalty, Cache, Layer};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A stack of layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Per-parameter-array gradients, in [`Sequential::param_arrays`] order.
pub type Gradients = Vec<Vec<f64>>;

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    /// Forward pass. Dropout is active only when `rng` is given.
    pub fn forward(&self, x: &Tensor, mut rng: Option<&mut StreamRng>) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(&cur, rng.as_deref_mut())?;
            out.ensure_finite(&format!("output of layer {i} ({})", layer.name()))?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, None)?.0)
    }

    pub fn backward(&self, caches: &[Cache], dout: &Tensor) -> Gradients {
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut grad = dout.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (dx, g) = layer.backward(cache, &grad);
            per_layer.push(g);
            grad = dx;
        }
        per_layer.into_iter().rev().flatten().collect()
    }

    pub fn param_arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|p| p.values))
            .collect()
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_arrays().iter().map(|p| p.len()).sum()
    }

    /// Index of the first parameter array of each layer.
    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut k = 0;
        for l in &self.layers {
            offsets.push(k);
            k += l.params().len();
        }
        offsets
    }

    /// Total L1 penalty for `(layer index, factor)` pairs.
    pub fn l1_total(&self, factors: &[(usize, f64)]) -> f64 {
        factors
            .iter()
            .filter_map(|&(i, f)| self.layers.get(i).map(|l| l1_penalty(l, f)))
            .sum()
    }

    pub fn add_l1_gradients(&self, factors: &[(usize, f64)], grads: &mut Gradients) {
        let offsets = self.param_offsets();
        for &(i, f) in factors {
            if let Some(layer) = self.layers.get(i) {
                let n = layer.params().len();
                add_l1_subgradient(layer, f, &mut grads[offsets[i]..offsets[i] + n]);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(Layer::check_consistent)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: Sequential,
}
