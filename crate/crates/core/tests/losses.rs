mod common;

use std::f64::consts::LN_2;

use common::*;
use mmhcl::autograd::Tape;
use mmhcl::linalg::DenseMatrix;
use mmhcl::model::ParamLeaves;
use mmhcl::objective::{bpr_loss, l2_penalty, scl_loss, TripleBatch};
use mmhcl::ContrastScope;
use proptest::prelude::*;
use rand::Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// The contrastive summand for one anchor, straight from its definition.
fn scl_term(h: &DenseMatrix, e: &DenseMatrix, a: usize, contrast: &[usize], tau: f64) -> f64 {
    let pos = (cosine(h.row(a), e.row(a)) / tau).exp();
    let denom: f64 = contrast
        .iter()
        .map(|&k| {
            (cosine(h.row(k), e.row(a)) / tau).exp() + (cosine(e.row(k), e.row(a)) / tau).exp()
        })
        .sum();
    -(pos / denom).ln()
}

#[test]
fn bpr_zero_margin_is_ln2() {
    let mut r = rng(50);
    for _ in 0..20 {
        let mut t = Tape::new();
        let u = t.leaf(random_dense(&mut r, 1, 6));
        let row = random_dense(&mut r, 1, 6);
        let items = t.leaf(DenseMatrix::vstack(&[&row, &row]).unwrap());
        let l = bpr_loss(&mut t, u, items, &TripleBatch::from_triples(&[(0, 0, 1)])).unwrap();
        assert!((t.scalar(l) - LN_2).abs() <= 1e-12);
    }
}

#[test]
fn bpr_matches_definition() {
    let mut r = rng(51);
    let eu = random_dense(&mut r, 4, 3);
    let ei = random_dense(&mut r, 5, 3);
    let triples = [(0, 1, 2), (3, 4, 0), (0, 2, 1), (2, 2, 3)];
    let mut want = 0.0;
    for &(u, i, j) in &triples {
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let m = dot(eu.row(u), ei.row(i)) - dot(eu.row(u), ei.row(j));
        want -= (1.0 / (1.0 + (-m).exp())).ln();
    }
    let mut t = Tape::new();
    let (u, i) = (t.leaf(eu), t.leaf(ei));
    let l = bpr_loss(&mut t, u, i, &TripleBatch::from_triples(&triples)).unwrap();
    assert!((t.scalar(l) - want).abs() <= 1e-12 * want.abs().max(1.0));
}

#[test]
fn scl_self_pair_is_ln2() {
    let mut r = rng(52);
    for _ in 0..20 {
        let tau = r.random_range(0.05..2.0);
        let mut t = Tape::new();
        let h = t.leaf(random_dense(&mut r, 1, 5));
        let l = scl_loss(&mut t, h, h, &[0], tau, ContrastScope::Batch).unwrap();
        assert!((t.scalar(l) - LN_2).abs() <= 1e-12);
    }
}

#[test]
fn scl_summands_are_positive_and_match_definition() {
    let mut r = rng(53);
    for _ in 0..1000 {
        let n = r.random_range(1..8);
        let d = r.random_range(1..6);
        let tau = r.random_range(0.05..1.5);
        let mut h = random_dense(&mut r, n, d);
        let e = random_dense(&mut r, n, d);
        if r.random_bool(0.1) {
            h.row_mut(0).fill(0.0);
        }
        let contrast: Vec<usize> = (0..n).filter(|_| r.random_bool(0.7)).collect();
        if contrast.is_empty() {
            continue;
        }
        let a = contrast[r.random_range(0..contrast.len())];
        let mut t = Tape::new();
        let (hn, en) = (t.leaf(h.clone()), t.leaf(e.clone()));
        let v = t.contrastive(hn, en, &[a], &contrast, tau).unwrap();
        let v = t.scalar(v);
        assert!(v > 0.0);
        assert!(v >= LN_2 - 1e-12);
        let want = scl_term(&h, &e, a, &contrast, tau);
        assert!((v - want).abs() <= 1e-10 * want.max(1.0), "{v} vs {want}");
    }
}

#[test]
fn scl_is_sum_over_anchors_and_scopes_differ() {
    let mut r = rng(54);
    let h = random_dense(&mut r, 6, 4);
    let e = random_dense(&mut r, 6, 4);
    let idx = [1, 3, 4];
    let mut t = Tape::new();
    let (hn, en) = (t.leaf(h.clone()), t.leaf(e.clone()));
    let batch = scl_loss(&mut t, hn, en, &idx, 0.5, ContrastScope::Batch).unwrap();
    let batch = t.scalar(batch);
    let full = scl_loss(&mut t, hn, en, &idx, 0.5, ContrastScope::Full).unwrap();
    let full = t.scalar(full);
    let all: Vec<usize> = (0..6).collect();
    let want_batch: f64 = idx.iter().map(|&a| scl_term(&h, &e, a, &idx, 0.5)).sum();
    let want_full: f64 = idx.iter().map(|&a| scl_term(&h, &e, a, &all, 0.5)).sum();
    assert!((batch - want_batch).abs() <= 1e-12 * want_batch);
    assert!((full - want_full).abs() <= 1e-12 * want_full);
    assert!(full > batch);
}

#[test]
fn scl_survives_extreme_temperature() {
    let mut r = rng(55);
    let h = random_dense(&mut r, 5, 3);
    let e = random_dense(&mut r, 5, 3);
    let mut t = Tape::new();
    let (hn, en) = (t.leaf(h), t.leaf(e));
    let l = scl_loss(&mut t, hn, en, &[0, 1, 2, 3, 4], 1e-4, ContrastScope::Batch).unwrap();
    assert!(t.scalar(l).is_finite());
    let g = t.backward(l).unwrap();
    assert!(g.get(hn).unwrap().first_non_finite().is_none());
}

#[test]
fn l2_is_frobenius_sum() {
    let mut r = rng(56);
    let tables: Vec<DenseMatrix> = (0..4).map(|k| random_dense(&mut r, k + 1, 3)).collect();
    let want: f64 = tables
        .iter()
        .map(|m| m.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        * 1e-3;
    let mut t = Tape::new();
    let ids: Vec<_> = tables.into_iter().map(|m| t.leaf(m)).collect();
    let leaves = ParamLeaves {
        user_emb: ids[0],
        item_emb: ids[1],
        user_hyper: ids[2],
        item_hyper: ids[3],
    };
    let l = l2_penalty(&mut t, &leaves, 1e-3).unwrap();
    assert!((t.scalar(l) - want).abs() <= 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scl_invariant_to_row_rescaling(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let h = random_dense(&mut r, 4, 3);
        let e = random_dense(&mut r, 4, 3);
        let mut t = Tape::new();
        let (hn, en) = (t.leaf(h.clone()), t.leaf(e.clone()));
        let base = scl_loss(&mut t, hn, en, &[0, 1, 2, 3], 0.5, ContrastScope::Batch).unwrap();
        let base = t.scalar(base);
        let (hs, es) = (t.leaf(h.scale(c)), t.leaf(e.scale(c)));
        let scaled = scl_loss(&mut t, hs, es, &[0, 1, 2, 3], 0.5, ContrastScope::Batch).unwrap();
        let scaled = t.scalar(scaled);
        prop_assert!((base - scaled).abs() <= 1e-12 * base);
    }

    #[test]
    fn scl_bit_exact_under_power_of_two_rescaling(seed in any::<u64>(), p in -8i32..8) {
        let mut r = rng(seed);
        let h = random_dense(&mut r, 4, 3);
        let e = random_dense(&mut r, 4, 3);
        let c = 2f64.powi(p);
        let mut t = Tape::new();
        let (hn, en) = (t.leaf(h.clone()), t.leaf(e.clone()));
        let base = scl_loss(&mut t, hn, en, &[0, 2], 0.5, ContrastScope::Full).unwrap();
        let (hs, es) = (t.leaf(h.scale(c)), t.leaf(e.scale(c)));
        let scaled = scl_loss(&mut t, hs, es, &[0, 2], 0.5, ContrastScope::Full).unwrap();
        prop_assert_eq!(t.scalar(base).to_bits(), t.scalar(scaled).to_bits());
    }

    #[test]
    fn bpr_is_nonnegative_and_finite(seed in any::<u64>(), spread in 0.1f64..50.0) {
        let mut r = rng(seed);
        let eu = random_dense(&mut r, 3, 4).scale(spread);
        let ei = random_dense(&mut r, 4, 4).scale(spread);
        let mut t = Tape::new();
        let (u, i) = (t.leaf(eu), t.leaf(ei));
        let l = bpr_loss(&mut t, u, i, &TripleBatch::from_triples(&[(0, 1, 2), (1, 3, 0), (2, 0, 3)])).unwrap();
        let v = t.scalar(l);
        prop_assert!(v.is_finite() && v >= 0.0);
    }
}
