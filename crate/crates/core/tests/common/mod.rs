//! Helpers shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use svfcl::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = gaussian(rng, n, n);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut v = g.column(j);
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / norm).collect());
    }
    Matrix::from_rows(&cols).unwrap().transpose()
}

/// Naive triple-loop product, independent of the library kernels.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a[(i, k)] * b[(k, j)];
            }
            out.row_mut(i)[j] = s;
        }
    }
    out
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖QᵀQ − I‖_F` for the columns of `q`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let g = q.t_matmul(q).unwrap();
    g.sub(&Matrix::identity(g.rows())).unwrap().frobenius_norm()
}

use svfcl::adapters::AdapterKind;
use svfcl::data::Sample;
use svfcl::model::{Backbone, BackboneConfig, Model};

/// Random small network with non-zero adapter parameters and head rows.
pub fn random_model(
    r: &mut ChaCha8Rng,
    shapes: &[(usize, usize)],
    kind: AdapterKind,
    classes: &[usize],
) -> Model {
    let rank = shapes.iter().map(|&(m, n)| m.min(n)).min().unwrap().min(3);
    let config = BackboneConfig {
        layer_shapes: shapes.to_vec(),
        adapt_mask: vec![],
        adapter_kind: kind,
        rank,
    };
    let weights = shapes.iter().map(|&(m, n)| gaussian(r, m, n)).collect();
    let mut model = Model::new(Backbone::new(config, weights, r.random()).unwrap());
    for i in 0..shapes.len() {
        let len = model.backbone.layers()[i].trainable_len();
        let p: Vec<f64> = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(r);
                0.3 * z
            })
            .collect();
        model
            .backbone
            .update_layer(i, |l| l.set_trainable_params(&p))
            .unwrap();
    }
    let out = shapes.last().unwrap().1;
    for &c in classes {
        model
            .head
            .set_row(c, (0..out).map(|_| StandardNormal.sample(r)).collect());
    }
    model
}

pub fn random_batch(r: &mut ChaCha8Rng, dim: usize, classes: &[usize], size: usize) -> Vec<Sample> {
    (0..size)
        .map(|i| Sample {
            features: (0..dim).map(|_| StandardNormal.sample(r)).collect(),
            label: classes[i % classes.len()],
        })
        .collect()
}

/// Smallest |pre-activation| of any hidden unit over the batch; central
/// differences are unreliable when this is near zero.
pub fn kink_margin(model: &Model, batch: &[Sample]) -> f64 {
    let rows: Vec<Vec<f64>> = batch.iter().map(|s| s.features.clone()).collect();
    let cache = model
        .backbone
        .forward_batch(&Matrix::from_rows(&rows).unwrap())
        .unwrap();
    let hidden = &cache.outputs[..cache.outputs.len() - 1];
    hidden
        .iter()
        .flat_map(|z| z.data().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic and central-difference
/// gradients over every trainable adapter parameter and head entry.
/// Relative error is `|a − f| / max(|a|, |f|, floor)`.
pub fn gradient_check(model: &Model, batch: &[Sample], classes: &[usize], floor: f64) -> f64 {
    let refs: Vec<&Sample> = batch.iter().collect();
    let grads = model.loss_and_gradients(&refs, classes).unwrap();
    let loss = |m: &Model| m.loss_and_gradients(&refs, classes).unwrap().loss;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(floor);
    let mut worst = 0.0f64;

    for (i, layer_grad) in grads.layers.iter().enumerate() {
        let base = model.backbone.layers()[i].trainable_params();
        for (k, &analytic) in layer_grad.iter().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut p = base.clone();
            p[k] += FD_STEP;
            plus.backbone
                .update_layer(i, |l| l.set_trainable_params(&p))
                .unwrap();
            p[k] -= 2.0 * FD_STEP;
            minus
                .backbone
                .update_layer(i, |l| l.set_trainable_params(&p))
                .unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel(analytic, fd));
        }
    }
    for (row, &c) in classes.iter().enumerate() {
        let base = model.head.row(c).unwrap().to_vec();
        for k in 0..base.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut p = base.clone();
            p[k] += FD_STEP;
            plus.head.set_row(c, p.clone());
            p[k] -= 2.0 * FD_STEP;
            minus.head.set_row(c, p);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel(grads.head[(row, k)], fd));
        }
    }
    worst
}
