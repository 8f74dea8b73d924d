use serde::{Deserialize, Serialize};

use super::{FullFtWeights, LayerAdapter, LoraAdapterStack, LoraPair, SvfAdapterStack};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Serialized adapter state. The base weight is stored separately (see the
/// model checkpoint); this holds only what training produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AdapterCheckpoint {
    Svf {
        shape: (usize, usize),
        rank: usize,
        frozen_shifts: Vec<Vec<f64>>,
        current_shift: Vec<f64>,
    },
    Lora {
        shape: (usize, usize),
        rank: usize,
        init_seed: u64,
        frozen_pairs: Vec<LoraPair>,
        current: LoraPair,
    },
    Full {
        shape: (usize, usize),
        weights: Matrix,
    },
    Frozen {
        shape: (usize, usize),
    },
}

impl AdapterCheckpoint {
    pub(super) fn from_layer(layer: &LayerAdapter) -> Self {
        let shape = layer.shape();
        match layer {
            LayerAdapter::Frozen(_) => AdapterCheckpoint::Frozen { shape },
            LayerAdapter::Svf(s) => AdapterCheckpoint::Svf {
                shape,
                rank: s.active_rank(),
                frozen_shifts: s.frozen_shifts().to_vec(),
                current_shift: s.current_shift().to_vec(),
            },
            LayerAdapter::Lora(l) => AdapterCheckpoint::Lora {
                shape,
                rank: l.rank(),
                init_seed: l.init_seed(),
                frozen_pairs: l.frozen_pairs().to_vec(),
                current: l.current().clone(),
            },
            LayerAdapter::Full(f) => AdapterCheckpoint::Full {
                shape,
                weights: f.w.clone(),
            },
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            AdapterCheckpoint::Svf { shape, .. }
            | AdapterCheckpoint::Lora { shape, .. }
            | AdapterCheckpoint::Full { shape, .. }
            | AdapterCheckpoint::Frozen { shape } => *shape,
        }
    }

    /// Rebuilds the layer on top of its base weight. SVF bases are recomputed,
    /// which is deterministic for identical weights.
    pub fn restore(&self, base_w: Matrix) -> Result<LayerAdapter> {
        if base_w.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "checkpoint for {:?} applied to weight {:?}",
                self.shape(),
                base_w.shape()
            )));
        }
        Ok(match self {
            AdapterCheckpoint::Frozen { .. } => LayerAdapter::Frozen(base_w),
            AdapterCheckpoint::Svf {
                rank,
                frozen_shifts,
                current_shift,
                ..
            } => LayerAdapter::Svf(SvfAdapterStack::with_shifts(
                base_w,
                *rank,
                frozen_shifts.clone(),
                current_shift.clone(),
            )?),
            AdapterCheckpoint::Lora {
                rank,
                init_seed,
                frozen_pairs,
                current,
                ..
            } => LayerAdapter::Lora(LoraAdapterStack::with_pairs(
                base_w,
                *rank,
                *init_seed,
                frozen_pairs.clone(),
                current.clone(),
            )?),
            AdapterCheckpoint::Full { weights, .. } => {
                if weights.shape() != base_w.shape() {
                    return Err(Error::Shape("full fine-tuning weights shape".into()));
                }
                LayerAdapter::Full(FullFtWeights::new(weights.clone()))
            }
        })
    }
}
