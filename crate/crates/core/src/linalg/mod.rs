//! Dense matrices and the SVD kernels the adapters are built on.

mod matrix;
mod svd;

pub use matrix::{dot, frobenius_norm, norm2, Matrix};
pub use svd::{
    best_rank_r, svd, truncate, SvdFactorization, MAX_SWEEPS, OFF_DIAGONAL_TOL, RANK_TOL,
};
