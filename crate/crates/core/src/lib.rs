//! Singular-value fine-tuning for few-shot class-incremental learning.
//!
//! A frozen weight matrix `W = U Σ Vᵀ` is adapted per task by a shift vector
//! `ΔΣ_t` on its singular values. Past shifts are frozen and merged by
//! summation, so every update stays in the span of the fixed rank-one
//! directions `u_k v_kᵀ`. LoRA and full fine-tuning are provided as
//! baselines, and [`harness`] runs the sequential session protocol with a
//! nearest-class-mean classifier.

pub mod adapters;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdFactorization};
