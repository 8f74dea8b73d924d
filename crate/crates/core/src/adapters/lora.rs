use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Standard deviation of the Gaussian used for a fresh `A` factor.
pub const LORA_INIT_STD: f64 = 0.02;

/// One task's low-rank update `A B` with `A: m × r` and `B: r × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPair {
    pub a: Matrix,
    pub b: Matrix,
}

impl LoraPair {
    /// `A ~ N(0, LORA_INIT_STD²)`, `B = 0`, so the product starts at zero.
    pub fn fresh(shape: (usize, usize), rank: usize, rng: &mut ChaCha8Rng) -> Self {
        let (m, n) = shape;
        let normal = Normal::new(0.0, LORA_INIT_STD).expect("valid std");
        let a = Matrix::from_raw(m, rank, (0..m * rank).map(|_| normal.sample(rng)).collect());
        LoraPair {
            a,
            b: Matrix::zeros(rank, n),
        }
    }

    pub fn product(&self) -> Matrix {
        self.a.matmul(&self.b).expect("pair shapes agree")
    }

    fn check(&self, shape: (usize, usize), rank: usize) -> Result<()> {
        if self.a.shape() != (shape.0, rank) || self.b.shape() != (rank, shape.1) {
            return Err(Error::Shape(format!(
                "pair {:?}·{:?} does not fit {:?} at rank {rank}",
                self.a.shape(),
                self.b.shape(),
                shape
            )));
        }
        Ok(())
    }
}

/// LoRA baseline: `W_t = W + Σ_{i<t} A_i B_i + A_t B_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapterStack {
    base_w: Matrix,
    rank: usize,
    init_seed: u64,
    frozen_pairs: Vec<LoraPair>,
    current: LoraPair,
}

impl LoraAdapterStack {
    pub fn new(base_w: Matrix, rank: usize, init_seed: u64) -> Result<Self> {
        let (m, n) = base_w.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::Range(format!(
                "lora rank {rank} outside 1..={}",
                m.min(n)
            )));
        }
        let current = LoraPair::fresh((m, n), rank, &mut task_rng(init_seed, 0));
        Ok(LoraAdapterStack {
            base_w,
            rank,
            init_seed,
            frozen_pairs: Vec::new(),
            current,
        })
    }

    pub fn with_pairs(
        base_w: Matrix,
        rank: usize,
        init_seed: u64,
        frozen_pairs: Vec<LoraPair>,
        current: LoraPair,
    ) -> Result<Self> {
        let mut stack = Self::new(base_w, rank, init_seed)?;
        let shape = stack.base_w.shape();
        for p in frozen_pairs.iter().chain(std::iter::once(&current)) {
            p.check(shape, rank)?;
        }
        stack.frozen_pairs = frozen_pairs;
        stack.current = current;
        Ok(stack)
    }

    pub fn base_weight(&self) -> &Matrix {
        &self.base_w
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn frozen_pairs(&self) -> &[LoraPair] {
        &self.frozen_pairs
    }

    pub fn current(&self) -> &LoraPair {
        &self.current
    }

    pub fn current_mut(&mut self) -> &mut LoraPair {
        &mut self.current
    }

    pub fn delta_weight(&self) -> Matrix {
        let (m, n) = self.base_w.shape();
        let mut delta = Matrix::zeros(m, n);
        for p in self
            .frozen_pairs
            .iter()
            .chain(std::iter::once(&self.current))
        {
            delta.add_assign(&p.product()).expect("pair shapes agree");
        }
        delta
    }

    pub fn materialize(&self) -> Matrix {
        self.base_w
            .add(&self.delta_weight())
            .expect("shapes agree by construction")
    }

    /// Gradients of the current pair given `G = ∂L/∂W_t`: `(G Bᵀ, Aᵀ G)`.
    pub fn gradient(&self, g: &Matrix) -> Result<(Matrix, Matrix)> {
        if g.shape() != self.base_w.shape() {
            return Err(Error::Shape(format!(
                "weight gradient {:?} for weight {:?}",
                g.shape(),
                self.base_w.shape()
            )));
        }
        Ok((g.matmul_t(&self.current.b)?, self.current.a.t_matmul(g)?))
    }

    pub fn freeze_task(&mut self) {
        let task = self.frozen_pairs.len() as u64 + 1;
        let fresh = LoraPair::fresh(
            self.base_w.shape(),
            self.rank,
            &mut task_rng(self.init_seed, task),
        );
        let done = std::mem::replace(&mut self.current, fresh);
        self.frozen_pairs.push(done);
    }
}

fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}
