mod common;

use common::{gaussian, max_abs_diff, naive_matmul, rng, uniform};
use proptest::prelude::*;
use svfcl::adapters::{
    merge_shifts, param_count, stability_compare, AdapterCheckpoint, AdapterKind, LayerAdapter,
    LoraAdapterStack, LoraPair, SvfAdapterStack,
};
use svfcl::data::make_in_span_target;
use svfcl::linalg::{frobenius_norm, svd, Matrix};
use svfcl::Error;

#[test]
fn merge_examples() {
    assert_eq!(
        merge_shifts(&[vec![0.1, 0.0]], &[0.2, 0.3]).unwrap(),
        vec![0.1 + 0.2, 0.3]
    );
    assert_eq!(merge_shifts(&[], &[0.5, -1.0]).unwrap(), vec![0.5, -1.0]);
    assert_eq!(
        merge_shifts(&[vec![1.0, -1.0], vec![-1.0, 1.0]], &[0.0, 0.0]).unwrap(),
        vec![0.0, 0.0]
    );
    assert!(matches!(
        merge_shifts(&[vec![1.0]], &[0.0, 0.0]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn zero_shifts_materialize_base_exactly() {
    let w = gaussian(&mut rng(1), 4, 3);
    let s = SvfAdapterStack::new(w.clone(), 3).unwrap();
    assert_eq!(s.materialize(), w);
}

#[test]
fn diagonal_case() {
    let w = Matrix::from_diag(2, 2, &[2.0, 1.0]);
    let s = SvfAdapterStack::with_shifts(w, 2, vec![], vec![0.5, -0.25]).unwrap();
    assert!(max_abs_diff(&s.materialize(), &Matrix::from_diag(2, 2, &[2.5, 0.75])) < 1e-15);
}

#[test]
fn product_form_matches_rank_one_sum() {
    let mut r = rng(2);
    for _ in 0..50 {
        let w = gaussian(&mut r, 3, 3);
        let shifts = (0..3).map(|_| uniform(&mut r, -2.0, 2.0)).collect();
        let frozen = vec![(0..3).map(|_| uniform(&mut r, -2.0, 2.0)).collect()];
        let s = SvfAdapterStack::with_shifts(w, 3, frozen, shifts).unwrap();
        let b = s.basis();
        // Brute-force Σ merged_k u_k v_kᵀ, entry by entry.
        let merged = s.merged_shift();
        let mut brute = Matrix::zeros(3, 3);
        for (k, shift) in merged.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    brute.row_mut(i)[j] += shift * b.u[(i, k)] * b.v_t[(k, j)];
                }
            }
        }
        assert!(max_abs_diff(&s.delta_weight(), &brute) <= 1e-10);
        assert!(max_abs_diff(&s.delta_weight_rank_one(), &brute) <= 1e-10);
    }
}

#[test]
fn svf_gradient_on_identity_basis() {
    let s = SvfAdapterStack::new(Matrix::from_diag(2, 2, &[2.0, 1.0]), 2).unwrap();
    let g = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(s.gradient(&g).unwrap(), vec![1.0, 4.0]);
}

#[test]
fn svf_rank_is_bounded_by_numeric_rank() {
    let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
    assert!(SvfAdapterStack::new(w.clone(), 1).is_ok());
    assert!(matches!(SvfAdapterStack::new(w, 2), Err(Error::Range(_))));
}

#[test]
fn lora_examples() {
    let zero_a = LoraPair {
        a: Matrix::zeros(2, 1),
        b: Matrix::from_rows(&[vec![5.0, 6.0]]).unwrap(),
    };
    let w = gaussian(&mut rng(3), 2, 2);
    let s = LoraAdapterStack::with_pairs(w.clone(), 1, 0, vec![zero_a.clone()], zero_a).unwrap();
    assert_eq!(s.materialize(), w);

    let pair = LoraPair {
        a: Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap(),
    };
    let s = LoraAdapterStack::with_pairs(Matrix::zeros(2, 2), 1, 0, vec![], pair).unwrap();
    assert_eq!(
        s.materialize(),
        Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap()
    );
}

#[test]
fn lora_matches_naive_accumulation() {
    let mut r = rng(4);
    let w = gaussian(&mut r, 5, 4);
    let pairs: Vec<LoraPair> = (0..4)
        .map(|_| LoraPair {
            a: gaussian(&mut r, 5, 2),
            b: gaussian(&mut r, 2, 4),
        })
        .collect();
    let s = LoraAdapterStack::with_pairs(w.clone(), 2, 0, pairs[..3].to_vec(), pairs[3].clone())
        .unwrap();
    let mut expected = w;
    for p in &pairs {
        expected = expected.add(&naive_matmul(&p.a, &p.b)).unwrap();
    }
    assert!(max_abs_diff(&s.materialize(), &expected) <= 1e-12);
}

#[test]
fn lora_shape_mismatch() {
    let bad = LoraPair {
        a: Matrix::zeros(3, 1),
        b: Matrix::zeros(1, 2),
    };
    assert!(matches!(
        LoraAdapterStack::with_pairs(Matrix::zeros(2, 2), 1, 0, vec![], bad),
        Err(Error::Shape(_))
    ));
}

#[test]
fn param_count_examples() {
    assert_eq!(param_count(AdapterKind::Svf, (4, 3), 3, 1).unwrap(), 3);
    assert_eq!(param_count(AdapterKind::Lora, (4, 3), 2, 1).unwrap(), 14);
    assert_eq!(param_count(AdapterKind::Svf, (4, 3), 3, 5).unwrap(), 15);
    assert_eq!(param_count(AdapterKind::Full, (4, 3), 3, 5).unwrap(), 12);
    assert_eq!(param_count(AdapterKind::Frozen, (4, 3), 3, 5).unwrap(), 0);
    assert!(matches!(
        param_count(AdapterKind::Svf, (4, 3), 4, 1),
        Err(Error::Range(_))
    ));
    assert!(matches!(
        param_count(AdapterKind::Lora, (4, 3), 0, 1),
        Err(Error::Range(_))
    ));
}

#[test]
fn freeze_continuity() {
    let mut r = rng(5);
    let w = gaussian(&mut r, 4, 4);
    for kind in [AdapterKind::Svf, AdapterKind::Lora, AdapterKind::Full] {
        let mut l = LayerAdapter::new(kind, w.clone(), 2, 7).unwrap();
        let params: Vec<f64> = (0..l.trainable_len())
            .map(|_| uniform(&mut r, -1.0, 1.0))
            .collect();
        l.set_trainable_params(&params).unwrap();
        let before = l.effective_weight();
        l.freeze_task();
        assert_eq!(l.effective_weight(), before, "{kind}");
    }
    let mut s = SvfAdapterStack::new(w.clone(), 3).unwrap();
    s.freeze_task();
    s.freeze_task();
    assert_eq!(s.materialize(), w);
}

#[test]
fn frozen_shift_bytes_survive_later_training() {
    let mut s = SvfAdapterStack::new(gaussian(&mut rng(6), 4, 3), 3).unwrap();
    s.current_shift_mut().copy_from_slice(&[0.3, -0.2, 0.1]);
    s.freeze_task();
    let snapshot: Vec<u64> = s.frozen_shifts()[0].iter().map(|v| v.to_bits()).collect();
    for step in 0..10 {
        s.current_shift_mut()[step % 3] += 0.01;
    }
    s.freeze_task();
    let after: Vec<u64> = s.frozen_shifts()[0].iter().map(|v| v.to_bits()).collect();
    assert_eq!(snapshot, after);
}

#[test]
fn stability_examples() {
    let w = gaussian(&mut rng(7), 4, 3);
    let basis = svd(&w).unwrap();
    let target = make_in_span_target(&basis, &[2.0]).unwrap();
    let c = stability_compare(&w, &target, 1, 3, 0).unwrap();
    assert!(c.svf_recon_error < 1e-12);
    assert!((c.svf_norm - 2.0).abs() < 1e-12);

    let c = stability_compare(&w, &Matrix::zeros(4, 3), 2, 2, 0).unwrap();
    assert_eq!(c.svf_norm, 0.0);
    assert_eq!(c.best_lora_norm, 0.0);
    assert!(matches!(
        stability_compare(&w, &target, 4, 1, 0),
        Err(Error::Range(_))
    ));
}

#[test]
fn checkpoint_json_round_trip() {
    let mut r = rng(8);
    let w = gaussian(&mut r, 5, 4);
    for kind in AdapterKind::ALL {
        let mut l = LayerAdapter::new(kind, w.clone(), 2, 3).unwrap();
        let p: Vec<f64> = (0..l.trainable_len())
            .map(|_| uniform(&mut r, -1.0, 1.0))
            .collect();
        l.set_trainable_params(&p).unwrap();
        l.freeze_task();
        let json = serde_json::to_string(&l.checkpoint()).unwrap();
        let back: AdapterCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.restore(w.clone()).unwrap(), l, "{kind}");
    }
    let bad = r#"{"kind":"svf","shape":[5,4],"rank":2,"frozen_shifts":[],"current_shift":[0.0,0.0],"extra":1}"#;
    assert!(serde_json::from_str::<AdapterCheckpoint>(bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn span_invariant_and_norm_identity(
        m in 1usize..9, n in 1usize..9, seed in any::<u64>(), tasks in 0usize..4,
    ) {
        let mut r = rng(seed);
        let w = gaussian(&mut r, m, n);
        let rank = svd(&w).unwrap().rank();
        let mut shift = || -> Vec<f64> { (0..rank).map(|_| uniform(&mut r, -3.0, 3.0)).collect() };
        let frozen: Vec<Vec<f64>> = (0..tasks).map(|_| shift()).collect();
        let current = shift();
        let s = SvfAdapterStack::with_shifts(w.clone(), rank, frozen, current).unwrap();
        let l = LayerAdapter::Svf(s.clone());
        prop_assert!(l.span_residual().unwrap() <= 1e-10);
        let merged = s.merged_shift();
        let expected = merged.iter().map(|x| x * x).sum::<f64>().sqrt();
        let delta = s.materialize().sub(&w).unwrap();
        prop_assert!((frobenius_norm(&delta) - expected).abs() <= 1e-10 * expected.max(1.0));
    }

    #[test]
    fn merge_is_order_independent(seed in any::<u64>(), len in 1usize..6, count in 1usize..6) {
        let mut r = rng(seed);
        // Dyadic values keep every partial sum exact, so any order agrees bit for bit.
        let mut frozen: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..len).map(|_| (uniform(&mut r, -64.0, 64.0) * 8.0).round() / 8.0).collect())
            .collect();
        let current: Vec<f64> = vec![0.5; len];
        let a = merge_shifts(&frozen, &current).unwrap();
        frozen.reverse();
        frozen.rotate_left(count / 2);
        prop_assert_eq!(merge_shifts(&frozen, &current).unwrap(), a);
    }

    #[test]
    fn svf_uses_fewer_parameters_than_lora(m in 1usize..300, n in 1usize..300, frac in 0.0f64..1.0) {
        let rank = 1 + ((m.min(n) - 1) as f64 * frac) as usize;
        let svf = param_count(AdapterKind::Svf, (m, n), rank, 1).unwrap();
        let lora = param_count(AdapterKind::Lora, (m, n), rank, 1).unwrap();
        prop_assert_eq!(svf, rank);
        prop_assert_eq!(lora, rank * (m + n));
        prop_assert!(svf < lora);
    }
}
