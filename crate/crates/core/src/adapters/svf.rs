use crate::error::{Error, Result};
use crate::linalg::{dot, svd, Matrix, SvdFactorization};

use super::merge_shifts;

/// Frozen SVD basis plus per-task singular-value shifts.
///
/// Effective weight after task `t`:
/// `W_t = W + U diag(Σ_{i≤t} ΔΣ_i) Vᵀ`, with shifts on the top `active_rank`
/// diagonal positions only.
#[derive(Debug, Clone, PartialEq)]
pub struct SvfAdapterStack {
    base_w: Matrix,
    basis: SvdFactorization,
    active_rank: usize,
    frozen_shifts: Vec<Vec<f64>>,
    current_shift: Vec<f64>,
}

impl SvfAdapterStack {
    pub fn new(base_w: Matrix, active_rank: usize) -> Result<Self> {
        let basis = svd(&base_w)?;
        Self::from_factorization(base_w, basis, active_rank)
    }

    pub fn from_factorization(
        base_w: Matrix,
        basis: SvdFactorization,
        active_rank: usize,
    ) -> Result<Self> {
        if basis.source_shape != base_w.shape() {
            return Err(Error::Shape(format!(
                "factorization of {:?} does not match weight {:?}",
                basis.source_shape,
                base_w.shape()
            )));
        }
        let r2 = basis.rank();
        if active_rank == 0 || active_rank > r2 {
            return Err(Error::Range(format!(
                "active rank {active_rank} outside 1..={r2} (numeric rank of the base weight)"
            )));
        }
        Ok(SvfAdapterStack {
            base_w,
            basis,
            active_rank,
            frozen_shifts: Vec::new(),
            current_shift: vec![0.0; active_rank],
        })
    }

    /// Restores a stack from saved shift vectors.
    pub fn with_shifts(
        base_w: Matrix,
        active_rank: usize,
        frozen_shifts: Vec<Vec<f64>>,
        current_shift: Vec<f64>,
    ) -> Result<Self> {
        let mut stack = Self::new(base_w, active_rank)?;
        for s in frozen_shifts.iter().chain(std::iter::once(&current_shift)) {
            if s.len() != active_rank {
                return Err(Error::Shape(format!(
                    "shift of length {} for active rank {active_rank}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite shift".into()));
            }
        }
        stack.frozen_shifts = frozen_shifts;
        stack.current_shift = current_shift;
        Ok(stack)
    }

    pub fn base_weight(&self) -> &Matrix {
        &self.base_w
    }

    pub fn basis(&self) -> &SvdFactorization {
        &self.basis
    }

    pub fn active_rank(&self) -> usize {
        self.active_rank
    }

    pub fn frozen_shifts(&self) -> &[Vec<f64>] {
        &self.frozen_shifts
    }

    pub fn current_shift(&self) -> &[f64] {
        &self.current_shift
    }

    pub fn current_shift_mut(&mut self) -> &mut [f64] {
        &mut self.current_shift
    }

    pub fn merged_shift(&self) -> Vec<f64> {
        merge_shifts(&self.frozen_shifts, &self.current_shift)
            .expect("shift lengths are fixed at construction")
    }

    /// `U_r diag(merged) V_rᵀ` as a matrix product.
    pub fn delta_weight(&self) -> Matrix {
        let merged = self.merged_shift();
        let (m, n) = self.base_w.shape();
        let r = self.active_rank;
        let mut left = Matrix::zeros(m, r);
        for i in 0..m {
            for (k, &s) in merged.iter().enumerate() {
                left[(i, k)] = self.basis.u[(i, k)] * s;
            }
        }
        let right = Matrix::from_raw(r, n, self.basis.v_t.data()[..r * n].to_vec());
        left.matmul(&right).expect("shapes agree by construction")
    }

    /// `Σ_k merged_k · u_k v_kᵀ`.
    pub fn delta_weight_rank_one(&self) -> Matrix {
        self.basis.weighted_sum(&self.merged_shift())
    }

    pub fn materialize(&self) -> Matrix {
        self.base_w
            .add(&self.delta_weight())
            .expect("shapes agree by construction")
    }

    /// `∂L/∂ΔΣ_t[k] = u_kᵀ G v_k` for the active directions.
    pub fn gradient(&self, g: &Matrix) -> Result<Vec<f64>> {
        if g.shape() != self.base_w.shape() {
            return Err(Error::Shape(format!(
                "weight gradient {:?} for weight {:?}",
                g.shape(),
                self.base_w.shape()
            )));
        }
        Ok((0..self.active_rank)
            .map(|k| {
                let gv = g.matmul_t_vec(self.basis.v_t.row(k));
                dot(&self.basis.left(k), &gv)
            })
            .collect())
    }

    /// Moves the current shift into the frozen history and starts a zero shift.
    pub fn freeze_task(&mut self) {
        let done = std::mem::replace(&mut self.current_shift, vec![0.0; self.active_rank]);
        self.frozen_shifts.push(done);
    }
}

impl Matrix {
    /// `self · v` for a column vector `v`.
    pub(crate) fn matmul_t_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|i| dot(self.row(i), v)).collect()
    }
}
