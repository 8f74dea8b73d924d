//! The trainable network: adapted backbone, cross-entropy training head,
//! Adam, and the nearest-class-mean classifier used for evaluation.

mod adam;
mod backbone;
mod ncm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use backbone::{Backbone, BackboneConfig, ForwardCache};
pub use ncm::{compute_prototypes, l2_normalized, ncm_classify, NcmClassifier};

use crate::adapters::AdapterCheckpoint;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Linear head used only for the cross-entropy objective inside a session.
/// Rows for finished classes are overwritten by their prototypes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHead {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl TrainHead {
    pub fn classes(&self) -> Vec<usize> {
        self.rows.keys().copied().collect()
    }

    pub fn row(&self, class: usize) -> Option<&[f64]> {
        self.rows.get(&class).map(Vec::as_slice)
    }

    /// Adds a zero row for `class` if it has none.
    pub fn ensure_class(&mut self, class: usize, dim: usize) {
        self.rows.entry(class).or_insert_with(|| vec![0.0; dim]);
    }

    pub fn set_row(&mut self, class: usize, row: Vec<f64>) {
        self.rows.insert(class, row);
    }

    /// Rows for `classes`, stacked in that order.
    pub fn matrix_for(&self, classes: &[usize]) -> Result<Matrix> {
        let rows = classes
            .iter()
            .map(|c| {
                self.rows
                    .get(c)
                    .cloned()
                    .ok_or_else(|| Error::InvalidLabel {
                        label: *c,
                        reason: "class has no head row".into(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }

    pub fn params_for(&self, classes: &[usize]) -> Result<Vec<f64>> {
        Ok(self.matrix_for(classes)?.into_data())
    }

    pub fn set_params_for(&mut self, classes: &[usize], params: &[f64]) -> Result<()> {
        if classes.is_empty() {
            return Ok(());
        }
        let dim = params.len() / classes.len();
        if dim * classes.len() != params.len() {
            return Err(Error::Shape("head parameters do not split evenly".into()));
        }
        for (c, chunk) in classes.iter().zip(params.chunks(dim)) {
            self.rows.insert(*c, chunk.to_vec());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Seen classes, ascending; `logits[i]` belongs to `classes[i]`.
    pub classes: Vec<usize>,
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Gradients of the mean cross-entropy over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// `∂L/∂W_i` for every layer's effective weight.
    pub weights: Vec<Matrix>,
    /// Gradient of each layer's trainable parameters (`∂L/∂ΔΣ_t` for SVF).
    pub layers: Vec<Vec<f64>>,
    /// `∂L/∂head`, one row per class in the order requested.
    pub head: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbone: Backbone,
    pub head: TrainHead,
    pub ncm: NcmClassifier,
}

impl Model {
    pub fn new(backbone: Backbone) -> Self {
        Model {
            backbone,
            head: TrainHead::default(),
            ncm: NcmClassifier::new(true),
        }
    }

    /// Embedding and head logits over every class the head knows.
    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let embedding = self.backbone.embed(x)?;
        let classes = self.head.classes();
        let logits = classes
            .iter()
            .map(|&c| dot(self.head.row(c).expect("listed class"), &embedding))
            .collect();
        Ok(Forward {
            classes,
            logits,
            embedding,
        })
    }

    /// Mean cross-entropy over `batch` with logits restricted to `classes`,
    /// and its exact gradients.
    pub fn loss_and_gradients(&self, batch: &[&Sample], classes: &[usize]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let targets = batch
            .iter()
            .map(|s| {
                classes
                    .iter()
                    .position(|&c| c == s.label)
                    .ok_or_else(|| Error::InvalidLabel {
                        label: s.label,
                        reason: format!("not among the trained classes {classes:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;

        let d_in = self.backbone.input_dim();
        let mut x = Matrix::zeros(batch.len(), d_in);
        for (i, s) in batch.iter().enumerate() {
            if s.features.len() != d_in {
                return Err(Error::Shape(format!(
                    "sample of dimension {} for backbone expecting {d_in}",
                    s.features.len()
                )));
            }
            x.row_mut(i).copy_from_slice(&s.features);
        }

        let head = self.head.matrix_for(classes)?;
        let cache = self.backbone.forward_batch(&x)?;
        let emb = cache.embeddings();
        let logits = emb.matmul_t(&head)?;

        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut d_logits = Matrix::zeros(batch.len(), classes.len());
        for (i, &y) in targets.iter().enumerate() {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[y];
            let d = d_logits.row_mut(i);
            for (k, l) in row.iter().enumerate() {
                d[k] = (l - lse).exp() / b;
            }
            d[y] -= 1.0 / b;
        }
        loss /= b;

        let head_grad = d_logits.t_matmul(emb)?;
        let d_embed = d_logits.matmul(&head)?;
        let weights = self.backbone.backward(&cache, &d_embed)?;
        let layers = self
            .backbone
            .layers()
            .iter()
            .zip(&weights)
            .map(|(l, g)| l.param_gradient(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            loss,
            weights,
            layers,
            head: head_grad,
        })
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            backbone: self.backbone.config().clone(),
            layers: self
                .backbone
                .layers()
                .iter()
                .map(|l| LayerCheckpoint {
                    base_weight: l.base_weight().clone(),
                    adapter: l.checkpoint(),
                })
                .collect(),
            prototypes: self.ncm.prototypes().clone(),
            normalize: self.ncm.normalizes(),
        }
    }
}

/// Exact gradients of the session loss with respect to the singular-value
/// shifts (and every other trainable group) and the head.
pub fn backward_sigma(model: &Model, batch: &[&Sample], classes: &[usize]) -> Result<Gradients> {
    model.loss_and_gradients(batch, classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCheckpoint {
    pub base_weight: Matrix,
    pub adapter: AdapterCheckpoint,
}

/// Saved model: backbone config, per-layer base weight and adapter state, and
/// the prototype table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub backbone: BackboneConfig,
    pub layers: Vec<LayerCheckpoint>,
    pub prototypes: BTreeMap<usize, Vec<f64>>,
    pub normalize: bool,
}

impl ModelCheckpoint {
    pub fn restore(&self) -> Result<Model> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.adapter.restore(l.base_weight.clone()))
            .collect::<Result<Vec<_>>>()?;
        for (i, l) in layers.iter().enumerate() {
            if l.kind() != self.backbone.layer_kind(i) {
                return Err(Error::Config(format!(
                    "layer {i} holds a {} adapter but the config says {}",
                    l.kind(),
                    self.backbone.layer_kind(i)
                )));
            }
        }
        let backbone = Backbone::from_layers(self.backbone.clone(), layers)?;
        let mut ncm = NcmClassifier::new(self.normalize);
        for (&c, p) in &self.prototypes {
            if p.len() != backbone.output_dim() {
                return Err(Error::Shape(format!(
                    "prototype {c} has dimension {}, backbone outputs {}",
                    p.len(),
                    backbone.output_dim()
                )));
            }
            ncm.install(c, p.clone())?;
        }
        Ok(Model {
            backbone,
            head: TrainHead::default(),
            ncm,
        })
    }
}
