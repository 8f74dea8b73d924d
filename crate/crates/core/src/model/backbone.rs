use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterKind, LayerAdapter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn default_layer_shapes() -> Vec<(usize, usize)> {
    vec![(64, 48), (48, 32)]
}

fn default_rank() -> usize {
    8
}

fn default_adapter_kind() -> AdapterKind {
    AdapterKind::Svf
}

/// Stack of linear layers `x ↦ x W` (`W: in × out`) with a ramp between
/// consecutive layers and none after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// `(in, out)` per layer; the `out` of one layer is the `in` of the next.
    #[serde(default = "default_layer_shapes")]
    pub layer_shapes: Vec<(usize, usize)>,
    /// Which layers carry an adapter. Empty means every layer.
    #[serde(default)]
    pub adapt_mask: Vec<bool>,
    #[serde(default = "default_adapter_kind")]
    pub adapter_kind: AdapterKind,
    #[serde(default = "default_rank")]
    pub rank: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layer_shapes: default_layer_shapes(),
            adapt_mask: Vec::new(),
            adapter_kind: default_adapter_kind(),
            rank: default_rank(),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_shapes.is_empty() {
            return Err(Error::Config("backbone needs at least one layer".into()));
        }
        if let Some(&(m, n)) = self.layer_shapes.iter().find(|(m, n)| *m == 0 || *n == 0) {
            return Err(Error::Config(format!(
                "layer shape ({m}, {n}) has a zero side"
            )));
        }
        for (i, pair) in self.layer_shapes.windows(2).enumerate() {
            if pair[0].1 != pair[1].0 {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].1,
                    i + 1,
                    pair[1].0
                )));
            }
        }
        if !self.adapt_mask.is_empty() && self.adapt_mask.len() != self.layer_shapes.len() {
            return Err(Error::Config(format!(
                "adapt_mask has {} entries for {} layers",
                self.adapt_mask.len(),
                self.layer_shapes.len()
            )));
        }
        if matches!(self.adapter_kind, AdapterKind::Svf | AdapterKind::Lora) {
            for (i, &(m, n)) in self.layer_shapes.iter().enumerate() {
                if self.is_adapted(i) && (self.rank == 0 || self.rank > m.min(n)) {
                    return Err(Error::Config(format!(
                        "rank {} outside 1..={} for layer {i}",
                        self.rank,
                        m.min(n)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_adapted(&self, layer: usize) -> bool {
        self.adapt_mask.get(layer).copied().unwrap_or(true)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_shapes.last().expect("validated").1
    }

    /// Kind actually applied to layer `i` after the mask.
    pub fn layer_kind(&self, i: usize) -> AdapterKind {
        if self.is_adapted(i) {
            self.adapter_kind
        } else {
            AdapterKind::Frozen
        }
    }
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`batch × in`).
    pub inputs: Vec<Matrix>,
    /// Pre-activation output of each layer (`batch × out`).
    pub outputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &Matrix {
        self.outputs.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    layers: Vec<LayerAdapter>,
    weights: Vec<Matrix>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, base_weights: Vec<Matrix>, seed: u64) -> Result<Self> {
        config.validate()?;
        if base_weights.len() != config.layer_shapes.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} layers",
                base_weights.len(),
                config.layer_shapes.len()
            )));
        }
        let layers = base_weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| {
                if w.shape() != config.layer_shapes[i] {
                    return Err(Error::Shape(format!(
                        "layer {i} weight {:?}, config says {:?}",
                        w.shape(),
                        config.layer_shapes[i]
                    )));
                }
                LayerAdapter::new(
                    config.layer_kind(i),
                    w,
                    config.rank,
                    seed.wrapping_add(i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(config, layers)
    }

    pub fn from_layers(config: BackboneConfig, layers: Vec<LayerAdapter>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_shapes.len()
            || layers
                .iter()
                .zip(&config.layer_shapes)
                .any(|(l, &s)| l.shape() != s)
        {
            return Err(Error::Shape("layers do not match backbone config".into()));
        }
        let weights = layers.iter().map(LayerAdapter::effective_weight).collect();
        Ok(Backbone {
            config,
            layers,
            weights,
        })
    }

    /// Gaussian weights with std `√(2 / in)`, standing in for a pretrained
    /// network. Depends only on the shapes and the seed, never on the kind.
    pub fn random_weights(config: &BackboneConfig, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        config
            .layer_shapes
            .iter()
            .map(|&(m, n)| {
                let normal = Normal::new(0.0, (2.0 / m as f64).sqrt()).expect("valid std");
                let data = (0..m * n).map(|_| normal.sample(&mut rng)).collect();
                Matrix::from_raw(m, n, data)
            })
            .collect()
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerAdapter] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Effective weights as last materialized.
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    /// Mutates one layer and rematerializes its effective weight.
    pub fn update_layer<T>(
        &mut self,
        i: usize,
        f: impl FnOnce(&mut LayerAdapter) -> Result<T>,
    ) -> Result<T> {
        let out = f(&mut self.layers[i])?;
        self.weights[i] = self.layers[i].effective_weight();
        Ok(out)
    }

    pub fn freeze_task(&mut self) {
        for l in &mut self.layers {
            l.freeze_task();
        }
    }

    pub fn trainable_len(&self) -> usize {
        self.layers.iter().map(LayerAdapter::trainable_len).sum()
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input of dimension {} for backbone expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x.to_vec();
        for (i, w) in self.weights.iter().enumerate() {
            h = w.vec_mul(&h)?;
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch of dimension {} for backbone expecting {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut outputs = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        for (i, w) in self.weights.iter().enumerate() {
            let z = h.matmul(w)?;
            inputs.push(h);
            h = z.clone();
            if i + 1 < self.weights.len() {
                relu_in_place(h.data_mut());
            }
            outputs.push(z);
        }
        Ok(ForwardCache { inputs, outputs })
    }

    /// Weight gradients `∂L/∂W_i` given `∂L/∂embedding`.
    pub fn backward(&self, cache: &ForwardCache, d_embed: &Matrix) -> Result<Vec<Matrix>> {
        let n = self.weights.len();
        let mut grads = vec![Matrix::zeros(1, 1); n];
        let mut dz = d_embed.clone();
        for i in (0..n).rev() {
            grads[i] = cache.inputs[i].t_matmul(&dz)?;
            if i > 0 {
                let mut dh = dz.matmul_t(&self.weights[i])?;
                let pre = &cache.outputs[i - 1];
                for (d, &z) in dh.data_mut().iter_mut().zip(pre.data()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz = dh;
            }
        }
        Ok(grads)
    }
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
