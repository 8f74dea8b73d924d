//! Adaptation strategies over a frozen weight matrix.
//!
//! [`SvfAdapterStack`] is the singular-value method. [`LoraAdapterStack`] and
//! [`FullFtWeights`] are the baselines. [`LayerAdapter`] puts all of them
//! (plus an untouched weight) behind one interface for the model.

mod checkpoint;
mod full;
mod lora;
mod stability;
mod svf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::AdapterCheckpoint;
pub use full::FullFtWeights;
pub use lora::{LoraAdapterStack, LoraPair, LORA_INIT_STD};
pub use stability::{stability_compare, StabilityComparison, ORACLE_STEPS, ORACLE_STEP_SIZE};
pub use svf::SvfAdapterStack;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Svf,
    Lora,
    Full,
    Frozen,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 4] = [
        AdapterKind::Svf,
        AdapterKind::Lora,
        AdapterKind::Full,
        AdapterKind::Frozen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::Svf => "svf",
            AdapterKind::Lora => "lora",
            AdapterKind::Full => "full",
            AdapterKind::Frozen => "frozen",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdapterKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapter kind {s:?}")))
    }
}

/// Merge rule for singular-value shifts: elementwise summation over the
/// frozen history and the current shift.
pub fn merge_shifts(frozen: &[Vec<f64>], current: &[f64]) -> Result<Vec<f64>> {
    let mut merged = current.to_vec();
    for (i, shift) in frozen.iter().enumerate() {
        if shift.len() != current.len() {
            return Err(Error::Shape(format!(
                "frozen shift {i} has length {}, current has {}",
                shift.len(),
                current.len()
            )));
        }
        for (m, s) in merged.iter_mut().zip(shift) {
            *m += s;
        }
    }
    Ok(merged)
}

/// Trainable parameters stored for one `m × n` matrix after `num_tasks` tasks.
///
/// SVF keeps `r′` shifts per task, LoRA keeps `r₁(m + n)` factor entries per
/// task, full fine-tuning keeps the single matrix.
pub fn param_count(
    kind: AdapterKind,
    shape: (usize, usize),
    rank: usize,
    num_tasks: usize,
) -> Result<usize> {
    let (m, n) = shape;
    let limit = m.min(n);
    let check_rank = || {
        if rank == 0 || rank > limit {
            Err(Error::Range(format!(
                "rank {rank} outside 1..={limit} for {m}x{n}"
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        AdapterKind::Svf => {
            check_rank()?;
            Ok(num_tasks * rank)
        }
        AdapterKind::Lora => {
            check_rank()?;
            Ok(num_tasks * rank * (m + n))
        }
        AdapterKind::Full => Ok(m * n),
        AdapterKind::Frozen => Ok(0),
    }
}

/// Digests of the parts of an adapter that must never change once frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenState {
    /// Base weight and, for SVF, `U`, `Σ`, `Vᵀ`.
    pub basis: Option<String>,
    /// One digest per finished task's adapter.
    pub tasks: Vec<String>,
}

fn digest_f64s<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        for v in part {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// One weight matrix of the backbone together with its adaptation strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerAdapter {
    Frozen(Matrix),
    Svf(SvfAdapterStack),
    Lora(LoraAdapterStack),
    Full(FullFtWeights),
}

impl LayerAdapter {
    pub fn new(kind: AdapterKind, w: Matrix, rank: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            AdapterKind::Frozen => LayerAdapter::Frozen(w),
            AdapterKind::Svf => LayerAdapter::Svf(SvfAdapterStack::new(w, rank)?),
            AdapterKind::Lora => LayerAdapter::Lora(LoraAdapterStack::new(w, rank, seed)?),
            AdapterKind::Full => LayerAdapter::Full(FullFtWeights::new(w)),
        })
    }

    pub fn kind(&self) -> AdapterKind {
        match self {
            LayerAdapter::Frozen(_) => AdapterKind::Frozen,
            LayerAdapter::Svf(_) => AdapterKind::Svf,
            LayerAdapter::Lora(_) => AdapterKind::Lora,
            LayerAdapter::Full(_) => AdapterKind::Full,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.base_weight().shape()
    }

    /// The pre-adaptation weight. For full fine-tuning this is the live weight.
    pub fn base_weight(&self) -> &Matrix {
        match self {
            LayerAdapter::Frozen(w) => w,
            LayerAdapter::Svf(s) => s.base_weight(),
            LayerAdapter::Lora(l) => l.base_weight(),
            LayerAdapter::Full(f) => &f.w,
        }
    }

    pub fn effective_weight(&self) -> Matrix {
        match self {
            LayerAdapter::Frozen(w) => w.clone(),
            LayerAdapter::Svf(s) => s.materialize(),
            LayerAdapter::Lora(l) => l.materialize(),
            LayerAdapter::Full(f) => f.w.clone(),
        }
    }

    pub fn trainable_len(&self) -> usize {
        match self {
            LayerAdapter::Frozen(_) => 0,
            LayerAdapter::Svf(s) => s.active_rank(),
            LayerAdapter::Lora(l) => {
                let (m, n) = l.base_weight().shape();
                l.rank() * (m + n)
            }
            LayerAdapter::Full(f) => f.w.data().len(),
        }
    }

    pub fn trainable_params(&self) -> Vec<f64> {
        match self {
            LayerAdapter::Frozen(_) => Vec::new(),
            LayerAdapter::Svf(s) => s.current_shift().to_vec(),
            LayerAdapter::Lora(l) => [l.current().a.data(), l.current().b.data()].concat(),
            LayerAdapter::Full(f) => f.w.data().to_vec(),
        }
    }

    pub fn set_trainable_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.trainable_len() {
            return Err(Error::Shape(format!(
                "{} parameters for a {} adapter with {}",
                params.len(),
                self.kind(),
                self.trainable_len()
            )));
        }
        match self {
            LayerAdapter::Frozen(_) => {}
            LayerAdapter::Svf(s) => s.current_shift_mut().copy_from_slice(params),
            LayerAdapter::Lora(l) => {
                let split = l.current().a.data().len();
                let pair = l.current_mut();
                pair.a.data_mut().copy_from_slice(&params[..split]);
                pair.b.data_mut().copy_from_slice(&params[split..]);
            }
            LayerAdapter::Full(f) => f.w.data_mut().copy_from_slice(params),
        }
        Ok(())
    }

    /// Chain rule from `G = ∂L/∂W_t` to the trainable parameters, flattened in
    /// the same order as [`trainable_params`](Self::trainable_params).
    pub fn param_gradient(&self, g: &Matrix) -> Result<Vec<f64>> {
        if g.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for weight {:?}",
                g.shape(),
                self.shape()
            )));
        }
        match self {
            LayerAdapter::Frozen(_) => Ok(Vec::new()),
            LayerAdapter::Svf(s) => s.gradient(g),
            LayerAdapter::Lora(l) => {
                let (da, db) = l.gradient(g)?;
                Ok([da.data(), db.data()].concat())
            }
            LayerAdapter::Full(_) => Ok(g.data().to_vec()),
        }
    }

    pub fn freeze_task(&mut self) {
        match self {
            LayerAdapter::Svf(s) => s.freeze_task(),
            LayerAdapter::Lora(l) => l.freeze_task(),
            LayerAdapter::Frozen(_) | LayerAdapter::Full(_) => {}
        }
    }

    pub fn frozen_state(&self) -> FrozenState {
        match self {
            LayerAdapter::Frozen(w) => FrozenState {
                basis: Some(digest_f64s([w.data()])),
                tasks: Vec::new(),
            },
            LayerAdapter::Svf(s) => {
                let b = s.basis();
                FrozenState {
                    basis: Some(digest_f64s([
                        s.base_weight().data(),
                        b.u.data(),
                        b.sigma.as_slice(),
                        b.v_t.data(),
                    ])),
                    tasks: s
                        .frozen_shifts()
                        .iter()
                        .map(|d| digest_f64s([d.as_slice()]))
                        .collect(),
                }
            }
            LayerAdapter::Lora(l) => FrozenState {
                basis: Some(digest_f64s([l.base_weight().data()])),
                tasks: l
                    .frozen_pairs()
                    .iter()
                    .map(|p| digest_f64s([p.a.data(), p.b.data()]))
                    .collect(),
            },
            LayerAdapter::Full(_) => FrozenState {
                basis: None,
                tasks: Vec::new(),
            },
        }
    }

    /// Largest off-diagonal magnitude of `Uᵀ (W_t − W) V`; `None` for non-SVF layers.
    pub fn span_residual(&self) -> Option<f64> {
        let LayerAdapter::Svf(s) = self else {
            return None;
        };
        let delta = s.materialize().sub(s.base_weight()).expect("same shape");
        let b = s.basis();
        let rotated =
            b.u.t_matmul(&delta)
                .and_then(|x| x.matmul_t(&b.v_t))
                .expect("basis shapes agree");
        let mut worst = 0.0f64;
        for i in 0..rotated.rows() {
            for j in 0..rotated.cols() {
                if i != j {
                    worst = worst.max(rotated[(i, j)].abs());
                }
            }
        }
        Some(worst)
    }

    pub fn checkpoint(&self) -> AdapterCheckpoint {
        AdapterCheckpoint::from_layer(self)
    }
}
