//! One-sided Jacobi SVD.
//!
//! The tall orientation of the input (`rows >= cols`) is orthogonalized
//! column-pair by column-pair until every normalized inner product drops
//! below [`OFF_DIAGONAL_TOL`]. Column norms become the singular values and
//! the accumulated rotations become `V`. The left basis is normalized,
//! re-orthogonalized and completed to a full square orthonormal matrix.

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

/// Convergence threshold on `|a_p·a_q| / (‖a_p‖‖a_q‖)`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;
/// `sigma[k]` counts toward the numeric rank iff `sigma[k] > RANK_TOL * sigma[0]`.
pub const RANK_TOL: f64 = 1e-10;
/// Entries below this magnitude are skipped when fixing signs.
const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactorization {
    /// `m × m`, columns are left singular vectors.
    pub u: Matrix,
    /// `min(m, n)` values, descending.
    pub sigma: Vec<f64>,
    /// `n × n`, rows are right singular vectors.
    pub v_t: Matrix,
    pub source_shape: (usize, usize),
    /// Triplets beyond this index are retained but excluded from adaptation.
    pub active: usize,
}

impl SvdFactorization {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Numeric rank `r₂` under [`RANK_TOL`].
    pub fn rank(&self) -> usize {
        let Some(&top) = self.sigma.first() else {
            return 0;
        };
        self.sigma.iter().filter(|&&s| s > RANK_TOL * top).count()
    }

    pub fn left(&self, k: usize) -> Vec<f64> {
        self.u.column(k)
    }

    pub fn right(&self, k: usize) -> &[f64] {
        self.v_t.row(k)
    }

    /// `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.weighted_sum(&self.sigma)
    }

    /// `Σ_k coeffs[k] · u_k v_kᵀ` over the first `coeffs.len()` triplets.
    pub fn weighted_sum(&self, coeffs: &[f64]) -> Matrix {
        let (m, n) = self.source_shape;
        let mut out = Matrix::zeros(m, n);
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let v = self.v_t.row(k);
            for i in 0..m {
                let a = c * self.u[(i, k)];
                for (o, &b) in out.row_mut(i).iter_mut().zip(v) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

/// Full singular value decomposition `w = U diag(sigma) Vᵀ`.
pub fn svd(w: &Matrix) -> Result<SvdFactorization> {
    if !w.is_finite() {
        return Err(Error::InvalidInput(
            "svd input has non-finite entries".into(),
        ));
    }
    let (m, n) = w.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("svd input is empty".into()));
    }

    // Work on the tall orientation; its columns are the vectors we rotate.
    let transposed = m < n;
    let cols: Vec<Vec<f64>> = if transposed {
        (0..m).map(|i| w.row(i).to_vec()).collect()
    } else {
        (0..n).map(|j| w.column(j)).collect()
    };
    let tall_rows = m.max(n);
    let TallSvd { left, sigma, right } = tall_svd(cols, tall_rows)?;

    // `left` spans the tall dimension; swap back when we transposed.
    let (mut u_cols, mut v_cols) = if transposed {
        (right, left)
    } else {
        (left, right)
    };

    let k = sigma.len();
    for idx in 0..u_cols.len() {
        if first_significant(&u_cols[idx]) < 0.0 {
            negate(&mut u_cols[idx]);
            if idx < k {
                negate(&mut v_cols[idx]);
            }
        }
    }
    for v in v_cols.iter_mut().skip(k) {
        if first_significant(v) < 0.0 {
            negate(v);
        }
    }

    let mut u = Matrix::zeros(m, m);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            u[(i, j)] = x;
        }
    }
    let v_t = Matrix::from_raw(n, n, v_cols.concat());
    Ok(SvdFactorization {
        u,
        sigma,
        v_t,
        source_shape: (m, n),
        active: k,
    })
}

struct TallSvd {
    /// Full orthonormal basis of the tall dimension.
    left: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    /// Right singular vectors, one per input column.
    right: Vec<Vec<f64>>,
}

fn tall_svd(mut cols: Vec<Vec<f64>>, rows: usize) -> Result<TallSvd> {
    let n = cols.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let total = cols.iter().map(|c| dot(c, c)).sum::<f64>().sqrt();
    // Columns at rounding level relative to the whole matrix are treated as zero.
    let negligible = f64::EPSILON * total;
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    let mut converged = n < 2 || total == 0.0;
    let mut residual = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        residual = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha.sqrt() <= negligible || beta.sqrt() <= negligible {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                residual = residual.max(off);
                if off < OFF_DIAGONAL_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        converged = residual < OFF_DIAGONAL_TOL;
    }
    if !converged {
        return Err(Error::Convergence { sweeps, residual });
    }

    let raw_sigma: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: ties keep column order.
    order.sort_by(|&a, &b| raw_sigma[b].total_cmp(&raw_sigma[a]));

    let top = order.first().map_or(0.0, |&i| raw_sigma[i]);
    let zero_tol = rows.max(n) as f64 * f64::EPSILON * top;

    let mut sigma = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for &j in &order {
        let s = raw_sigma[j];
        right.push(v[j].clone());
        if s > zero_tol {
            sigma.push(s);
            left.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            sigma.push(0.0);
        }
    }

    // Repair orthogonality lost to small singular values, then complete the basis.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for u in left {
        let mut u = u;
        orthogonalize(&mut u, &basis);
        let nrm = norm2(&u);
        if nrm <= 0.5 {
            // Numerically dependent; this and every smaller value is dropped.
            break;
        }
        u.iter_mut().for_each(|x| *x /= nrm);
        basis.push(u);
    }
    let spanned = basis.len();
    for (k, s) in sigma.iter_mut().enumerate() {
        if k >= spanned {
            *s = 0.0;
        }
    }
    let mut candidate = 0;
    while basis.len() < rows && candidate < rows {
        let mut e = vec![0.0; rows];
        e[candidate] = 1.0;
        candidate += 1;
        orthogonalize(&mut e, &basis);
        let nrm = norm2(&e);
        if nrm > 1e-2 {
            e.iter_mut().for_each(|x| *x /= nrm);
            basis.push(e);
        }
    }
    if basis.len() != rows {
        return Err(Error::Invariant(
            "failed to complete left singular basis".into(),
        ));
    }

    Ok(TallSvd {
        left: basis,
        sigma,
        right,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (ap, aq) = (&mut head[p], &mut tail[0]);
    for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Two passes of modified Gram-Schmidt against an orthonormal set.
fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let proj = dot(x, b);
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi -= proj * bi;
            }
        }
    }
}

fn first_significant(x: &[f64]) -> f64 {
    x.iter()
        .copied()
        .find(|v| v.abs() > SIGN_EPS)
        .unwrap_or(0.0)
}

fn negate(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = -*v);
}

/// Keeps the top `r_prime` triplets active and zeroes the remaining singular
/// values. Bases are retained in full.
pub fn truncate(f: &SvdFactorization, r_prime: usize) -> Result<SvdFactorization> {
    if r_prime == 0 || r_prime > f.sigma.len() {
        return Err(Error::Range(format!(
            "truncation rank {r_prime} outside 1..={}",
            f.sigma.len()
        )));
    }
    let mut out = f.clone();
    out.sigma[r_prime..].iter_mut().for_each(|s| *s = 0.0);
    out.active = r_prime;
    Ok(out)
}

/// Frobenius-optimal approximation of rank at most `r`.
pub fn best_rank_r(w: &Matrix, r: usize) -> Result<Matrix> {
    let limit = w.rows().min(w.cols());
    if r == 0 || r > limit {
        return Err(Error::Range(format!("rank {r} outside 1..={limit}")));
    }
    let f = svd(w)?;
    Ok(f.weighted_sum(&f.sigma[..r]))
}
