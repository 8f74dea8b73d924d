//! Side-by-side fit of an in-span target by singular-value shifts and by a
//! gradient-descended low-rank pair.
//!
//! The SVF side is closed form: with bases fixed, the least-squares
//! coefficient for direction `k` is `u_kᵀ T v_k`. The LoRA side is an oracle,
//! not a tuned baseline: fixed-step descent on `‖AB − T‖²_F` from the usual
//! LoRA initialization, best of several random starts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lora::LoraPair;
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_norm, svd, Matrix};

pub const ORACLE_STEPS: usize = 500;
pub const ORACLE_STEP_SIZE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityComparison {
    pub svf_norm: f64,
    pub best_lora_norm: f64,
    pub svf_recon_error: f64,
    pub best_lora_recon_error: f64,
}

pub fn stability_compare(
    base: &Matrix,
    target_delta: &Matrix,
    rank: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityComparison> {
    let (m, n) = base.shape();
    if target_delta.shape() != (m, n) {
        return Err(Error::Shape(format!(
            "target {:?} for base {:?}",
            target_delta.shape(),
            base.shape()
        )));
    }
    if rank == 0 || rank > m.min(n) {
        return Err(Error::Range(format!(
            "rank {rank} outside 1..={}",
            m.min(n)
        )));
    }
    if trials == 0 {
        return Err(Error::Range(
            "at least one descent trial is required".into(),
        ));
    }

    let basis = svd(base)?;
    let coeffs: Vec<f64> = (0..rank)
        .map(|k| dot(&basis.left(k), &target_delta.matmul_t_vec(basis.right(k))))
        .collect();
    let svf_delta = basis.weighted_sum(&coeffs);
    let svf_norm = frobenius_norm(&svf_delta);
    let svf_recon_error = frobenius_norm(&svf_delta.sub(target_delta)?);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..trials {
        let pair = descend(LoraPair::fresh((m, n), rank, &mut rng), target_delta)?;
        let delta = pair.product();
        let recon = frobenius_norm(&delta.sub(target_delta)?);
        if best.is_none_or(|(r, _)| recon < r) {
            best = Some((recon, frobenius_norm(&delta)));
        }
    }
    let (best_lora_recon_error, best_lora_norm) = best.expect("trials >= 1");

    Ok(StabilityComparison {
        svf_norm,
        best_lora_norm,
        svf_recon_error,
        best_lora_recon_error,
    })
}

fn descend(mut pair: LoraPair, target: &Matrix) -> Result<LoraPair> {
    for _ in 0..ORACLE_STEPS {
        let residual = pair.product().sub(target)?;
        // ∂/∂A ‖AB − T‖² = 2 R Bᵀ, ∂/∂B = 2 Aᵀ R.
        let grad_a = residual.matmul_t(&pair.b)?;
        let grad_b = pair.a.t_matmul(&residual)?;
        let step = 2.0 * ORACLE_STEP_SIZE;
        for (p, g) in pair.a.data_mut().iter_mut().zip(grad_a.data()) {
            *p -= step * g;
        }
        for (p, g) in pair.b.data_mut().iter_mut().zip(grad_b.data()) {
            *p -= step * g;
        }
    }
    Ok(pair)
}
