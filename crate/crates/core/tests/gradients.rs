mod common;

use std::sync::Arc;

use common::*;
use mmhcl::autograd::{NodeId, Tape};
use mmhcl::graph::build_u2u;
use mmhcl::linalg::DenseMatrix;
use mmhcl::model::forward;
use mmhcl::objective::{record_objective, TripleBatch};
use mmhcl::{
    ContrastScope, GraphSet, ModalityBundle, ModalityTag, ModelConfig, ModelParams, Preset,
};

const STEP: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Central differences of `f` in every entry of `x`, compared with `grad`.
fn worst_fd_error(x: &DenseMatrix, grad: &DenseMatrix, f: &dyn Fn(&DenseMatrix) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(r, c, x.get(r, c) + STEP);
            let mut minus = x.clone();
            minus.set(r, c, x.get(r, c) - STEP);
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(grad.get(r, c), numeric));
        }
    }
    worst
}

fn small_instance() -> (GraphSet, TripleBatch) {
    let mut r = rng(21);
    let mut a = random_binary(&mut r, 5, 6, 0.35);
    for u in 0..5 {
        a[u][u] = 1.0;
    }
    a[4][5] = 1.0;
    a[0][4] = 1.0;
    let train = to_csr(&a);
    let feats = ModalityBundle::new(vec![
        (ModalityTag::Visual, random_dense(&mut r, 6, 4)),
        (ModalityTag::Textual, random_dense(&mut r, 6, 5)),
    ])
    .unwrap();
    let graphs = GraphSet::build(&train, &feats, 2, false).unwrap();
    let mut batch = TripleBatch::default();
    for u in 0..5 {
        let pos = (0..6).find(|&i| a[u][i] == 1.0).unwrap();
        let neg = (0..6).find(|&i| a[u][i] == 0.0).unwrap();
        batch.push(u, pos, neg);
    }
    (graphs, batch)
}

fn objective_value(
    params: &ModelParams,
    graphs: &GraphSet,
    batch: &TripleBatch,
    cfg: &ModelConfig,
) -> f64 {
    let mut out = forward(params, graphs, cfg).unwrap();
    record_objective(&mut out, batch, cfg).unwrap().1.total
}

fn check_full_objective(cfg: &ModelConfig) -> f64 {
    let (graphs, batch) = small_instance();
    let params = ModelParams::init(5, 6, 8, 5);
    let mut out = forward(&params, &graphs, cfg).unwrap();
    let (loss, _) = record_objective(&mut out, &batch, cfg).unwrap();
    let grads = out.tape.backward(loss).unwrap();
    let leaves = out.leaves.all();
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        let g = grads.get(leaves[k]).unwrap();
        let f = |x: &DenseMatrix| {
            let mut p = params.clone();
            *p.tables_mut()[k].1 = x.clone();
            objective_value(&p, &graphs, &batch, cfg)
        };
        worst = worst.max(worst_fd_error(params.tables()[k].1, g, &f));
    }
    worst
}

fn base_config() -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        alpha: 0.5,
        beta: 0.5,
        tau: 0.5,
        l2_reg: 1e-3,
        ..ModelConfig::preset(Preset::Synthetic)
    }
}

#[test]
fn full_objective_matches_finite_differences() {
    for u2u in 1..=2 {
        for i2i in 1..=2 {
            for bb in 1..=2 {
                for scope in [ContrastScope::Batch, ContrastScope::Full] {
                    let cfg = ModelConfig {
                        u2u_layers: u2u,
                        i2i_layers: i2i,
                        backbone_layers: bb,
                        contrast_scope: scope,
                        ..base_config()
                    };
                    let worst = check_full_objective(&cfg);
                    assert!(
                        worst <= 1e-5,
                        "depths {u2u}/{i2i}/{bb} {scope:?}: rel err {worst:e}"
                    );
                }
            }
        }
    }
}

#[test]
fn ablated_objectives_match_finite_differences() {
    for (u2u, i2i, scl, hgnn) in [
        (false, true, true, false),
        (true, false, true, false),
        (true, true, false, false),
        (true, true, true, true),
    ] {
        let cfg = ModelConfig {
            use_u2u: u2u,
            use_i2i: i2i,
            use_scl: scl,
            hgnn_style: hgnn,
            ..base_config()
        };
        let worst = check_full_objective(&cfg);
        assert!(
            worst <= 1e-5,
            "u2u={u2u} i2i={i2i} scl={scl} hgnn={hgnn}: {worst:e}"
        );
    }
}

#[test]
fn ablated_branch_gets_zero_gradient() {
    let (graphs, batch) = small_instance();
    let params = ModelParams::init(5, 6, 8, 5);
    let cfg = ModelConfig {
        use_u2u: false,
        l2_reg: 0.0,
        ..base_config()
    };
    let mut out = forward(&params, &graphs, &cfg).unwrap();
    let (loss, _) = record_objective(&mut out, &batch, &cfg).unwrap();
    let grads = out.tape.backward(loss).unwrap();
    assert_eq!(
        grads.get(out.leaves.user_hyper).unwrap().frobenius_sq(),
        0.0
    );
}

fn check_primitive(x: DenseMatrix, build: &dyn Fn(&mut Tape, NodeId) -> NodeId) {
    let mut t = Tape::new();
    let leaf = t.leaf(x.clone());
    let out = build(&mut t, leaf);
    let g = t.backward(out).unwrap();
    let f = |v: &DenseMatrix| {
        let mut t = Tape::new();
        let leaf = t.leaf(v.clone());
        let out = build(&mut t, leaf);
        t.scalar(out)
    };
    let worst = worst_fd_error(&x, g.get(leaf).unwrap(), &f);
    assert!(worst <= 1e-6, "rel err {worst:e}");
}

#[test]
fn primitives_match_finite_differences() {
    let mut r = rng(30);
    let w = random_dense(&mut r, 4, 3);
    let op = Arc::new(build_u2u(&to_csr(&random_binary(&mut r, 4, 5, 0.6)), false).unwrap());
    for _ in 0..5 {
        let x = random_dense(&mut r, 4, 3);
        let wn = w.clone();
        // weighted sums keep the scalar output sensitive to every entry
        let weighted = move |t: &mut Tape, n: NodeId| {
            let c = t.constant(wn.clone());
            let p = t.rowwise_dot(n, c).unwrap();
            t.sum(p).unwrap()
        };
        let wf = weighted.clone();
        check_primitive(x.clone(), &move |t, n| {
            let y = t.row_l2_normalize(n).unwrap();
            wf(t, y)
        });
        let wf = weighted.clone();
        let op2 = op.clone();
        check_primitive(x.clone(), &move |t, n| {
            let y = t.apply(op2.clone(), n).unwrap();
            let y = t.apply(op2.clone(), y).unwrap();
            let m = t.mean_of(&[n, y]).unwrap();
            wf(t, m)
        });
        check_primitive(x.clone(), &|t, n| {
            let g = t.gather_rows(n, &[3, 0, 3, 1]).unwrap();
            let c = t.concat_rows(&[g, n]).unwrap();
            let s = t.gather_rows(c, &[0, 1, 2, 3]).unwrap();
            let d = t.rowwise_dot(s, n).unwrap();
            let l = t.log_sigmoid(d).unwrap();
            t.sum(l).unwrap()
        });
        check_primitive(x.clone(), &|t, n| {
            let s = t.scale(n, -2.5).unwrap();
            let a = t.add(s, n).unwrap();
            t.frobenius_sq(a).unwrap()
        });
        let other = random_dense(&mut r, 4, 3);
        check_primitive(x.clone(), &move |t, n| {
            let e = t.constant(other.clone());
            let f = t.add(e, n).unwrap();
            t.contrastive(n, f, &[0, 2, 3], &[0, 1, 2, 3], 0.35)
                .unwrap()
        });
        check_primitive(x, &|t, n| {
            t.contrastive(n, n, &[1, 2], &[1, 2], 0.8).unwrap()
        });
    }
}

#[test]
fn gradients_are_deterministic() {
    let (graphs, batch) = small_instance();
    let params = ModelParams::init(5, 6, 8, 9);
    let cfg = base_config();
    let run = || {
        let mut out = forward(&params, &graphs, &cfg).unwrap();
        let (loss, _) = record_objective(&mut out, &batch, &cfg).unwrap();
        let g = out.tape.backward(loss).unwrap();
        out.leaves.all().map(|l| g.get(l).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn finite_difference_rel_err_floor() {
    assert_eq!(rel_err(1e-9, 0.0), 1e-6);
    assert!(rel_err(2.0, 2.0 + 1e-6) < 1e-6);
}
