//! Eager reverse-mode differentiation over the handful of matrix primitives
//! the model is built from.
//!
//! Every `Tape` method computes its forward value immediately and appends a
//! node; [`Tape::backward`] walks the nodes in reverse and returns gradients
//! for every leaf. Operators and constants never receive gradients.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::dense::{normalize_with_norms, row_norms};
use crate::linalg::{DenseMatrix, SymmetricOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Apply(Arc<dyn SymmetricOperator>, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    GatherRows(NodeId, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    RowL2Normalize(NodeId, Vec<f64>),
    MeanOf(Vec<NodeId>),
    RowwiseDot(NodeId, NodeId),
    LogSigmoid(NodeId),
    Contrastive(Box<ContrastiveSpec>),
    Sum(NodeId),
    FrobeniusSq(NodeId),
}

#[derive(Debug)]
struct ContrastiveSpec {
    view: NodeId,
    fused: NodeId,
    anchors: Vec<usize>,
    contrast: Vec<usize>,
    tau: f64,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: DenseMatrix,
}

/// Append-only record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every leaf on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, DenseMatrix>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&DenseMatrix> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<DenseMatrix> {
        self.by_leaf.remove(&leaf)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &DenseMatrix)> {
        self.by_leaf.iter().map(|(k, v)| (*k, v))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(z)` without overflow for large `|z|`.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backward of `y = x / ‖x‖` for one row: `(ḡ − y (yᵀḡ)) / ‖x‖`, zero when `‖x‖ = 0`.
fn normalize_backward_row(y: &[f64], norm: f64, upstream: &[f64], out: &mut [f64]) {
    if norm <= 0.0 {
        return;
    }
    let proj = row_dot(y, upstream);
    for ((o, yv), g) in out.iter_mut().zip(y).zip(upstream) {
        *o += (g - yv * proj) / norm;
    }
}

/// Forward value of the fused contrastive term plus, optionally, the
/// gradients with respect to the two unit-normalised views.
///
/// For anchor `a` the term is `−z⁺ + log Σ_{k∈C} (exp z_k^h + exp z_k^e)` with
/// `z⁺ = ĥ_a·ê_a/τ`, `z_k^h = ĥ_k·ê_a/τ` and `z_k^e = ê_k·ê_a/τ`.
fn contrastive_core(
    view_unit: &DenseMatrix,
    fused_unit: &DenseMatrix,
    spec: &ContrastiveSpec,
    upstream: Option<f64>,
) -> (f64, Option<(DenseMatrix, DenseMatrix)>) {
    let tau = spec.tau;
    let mut grads = upstream.map(|_| {
        (
            DenseMatrix::zeros(view_unit.rows(), view_unit.cols()),
            DenseMatrix::zeros(fused_unit.rows(), fused_unit.cols()),
        )
    });
    let mut total = 0.0;
    let mut logits_h = vec![0.0; spec.contrast.len()];
    let mut logits_e = vec![0.0; spec.contrast.len()];
    for &a in &spec.anchors {
        let ea = fused_unit.row(a);
        let positive = row_dot(view_unit.row(a), ea) / tau;
        let mut shift = f64::NEG_INFINITY;
        for (slot, &k) in spec.contrast.iter().enumerate() {
            logits_h[slot] = row_dot(view_unit.row(k), ea) / tau;
            logits_e[slot] = row_dot(fused_unit.row(k), ea) / tau;
            shift = shift.max(logits_h[slot]).max(logits_e[slot]);
        }
        let partition: f64 = logits_h
            .iter()
            .chain(&logits_e)
            .map(|z| (z - shift).exp())
            .sum();
        let log_partition = shift + partition.ln();
        total += log_partition - positive;

        if let (Some(g), Some((gh, ge))) = (upstream, grads.as_mut()) {
            // z = x·y/τ contributes w·y/τ to x and w·x/τ to y
            let push = |gx: &mut DenseMatrix, x_row: usize, y: &[f64], w: f64| {
                for (o, v) in gx.row_mut(x_row).iter_mut().zip(y) {
                    *o += w * v / tau;
                }
            };
            let ea = ea.to_vec();
            let ha = view_unit.row(a).to_vec();
            push(gh, a, &ea, -g);
            push(ge, a, &ha, -g);
            for (slot, &k) in spec.contrast.iter().enumerate() {
                let wh = g * (logits_h[slot] - log_partition).exp();
                let we = g * (logits_e[slot] - log_partition).exp();
                push(gh, k, &ea, wh);
                push(ge, a, view_unit.row(k), wh);
                push(ge, k, &ea, we);
                let ek = fused_unit.row(k).to_vec();
                push(ge, a, &ek, we);
            }
        }
    }
    (total, grads)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: DenseMatrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Parameter(format!(
                "node {} is not on this tape",
                id.0
            )));
        }
        Ok(())
    }

    /// Trainable input; receives a gradient on backward.
    pub fn leaf(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn apply(&mut self, op: Arc<dyn SymmetricOperator>, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let value = op.apply(self.value(x))?;
        Ok(self.push(Op::Apply(op, x), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(x)?;
        let value = self.value(x).scale(c);
        Ok(self.push(Op::Scale(x, c), value))
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        self.check_id(x)?;
        let value = self.value(x).gather_rows(rows)?;
        Ok(self.push(Op::GatherRows(x, rows.to_vec()), value))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        for &p in parts {
            self.check_id(p)?;
        }
        let refs: Vec<&DenseMatrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseMatrix::vstack(&refs)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn row_l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let norms = row_norms(self.value(x));
        let value = normalize_with_norms(self.value(x), &norms);
        Ok(self.push(Op::RowL2Normalize(x, norms), value))
    }

    /// Elementwise mean of same-shaped matrices.
    pub fn mean_of(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("mean of an empty list".into()));
        };
        for &p in parts {
            self.check_id(p)?;
        }
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p))?;
        }
        let value = acc.scale(1.0 / parts.len() as f64);
        Ok(self.push(Op::MeanOf(parts.to_vec()), value))
    }

    /// Row-by-row inner products, shape `n x 1`.
    pub fn rowwise_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "rowwise_dot",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .row_iter()
            .zip(vb.row_iter())
            .map(|(x, y)| row_dot(x, y))
            .collect();
        let value = DenseMatrix::from_vec(va.rows(), 1, data)?;
        Ok(self.push(Op::RowwiseDot(a, b), value))
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let v = self.value(x);
        let data = v.data().iter().map(|&z| log_sigmoid(z)).collect();
        let value = DenseMatrix::from_vec(v.rows(), v.cols(), data)?;
        Ok(self.push(Op::LogSigmoid(x), value))
    }

    /// Cross-view contrastive term summed over `anchors`, contrasting each
    /// anchor's fused row against both views of every row in `contrast`.
    /// Similarities are temperature-scaled cosines; zero rows score 0.
    pub fn contrastive(
        &mut self,
        view: NodeId,
        fused: NodeId,
        anchors: &[usize],
        contrast: &[usize],
        tau: f64,
    ) -> Result<NodeId> {
        self.check_id(view)?;
        self.check_id(fused)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!(
                "temperature must be > 0, got {tau}"
            )));
        }
        if anchors.is_empty() || contrast.is_empty() {
            return Err(Error::Empty(
                "contrastive loss needs anchors and a contrast set".into(),
            ));
        }
        let (vh, ve) = (self.value(view), self.value(fused));
        if vh.shape() != ve.shape() {
            return Err(Error::shape(
                "contrastive",
                format!("{:?} vs {:?}", vh.shape(), ve.shape()),
            ));
        }
        if let Some(&bad) = anchors.iter().chain(contrast).find(|&&i| i >= vh.rows()) {
            return Err(Error::shape(
                "contrastive",
                format!("index {bad} out of range for {} rows", vh.rows()),
            ));
        }
        let spec = ContrastiveSpec {
            view,
            fused,
            anchors: anchors.to_vec(),
            contrast: contrast.to_vec(),
            tau,
        };
        let (loss, _) = contrastive_core(
            &normalize_with_norms(vh, &row_norms(vh)),
            &normalize_with_norms(ve, &row_norms(ve)),
            &spec,
            None,
        );
        Ok(self.push(Op::Contrastive(Box::new(spec)), DenseMatrix::scalar(loss)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let value = DenseMatrix::scalar(self.value(x).sum());
        Ok(self.push(Op::Sum(x), value))
    }

    pub fn frobenius_sq(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x)?;
        let value = DenseMatrix::scalar(self.value(x).frobenius_sq());
        Ok(self.push(Op::FrobeniusSq(x), value))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check_id(loss)?;
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(DenseMatrix::scalar(1.0));

        fn accumulate(adj: &mut [Option<DenseMatrix>], id: NodeId, g: DenseMatrix) -> Result<()> {
            match &mut adj[id.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        let mut by_leaf = BTreeMap::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                let g = adj[idx]
                    .take()
                    .unwrap_or_else(|| DenseMatrix::zeros(node.value.rows(), node.value.cols()));
                by_leaf.insert(NodeId(idx), g);
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Apply(op, x) => accumulate(&mut adj, *x, op.apply(&g)?)?,
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g.scale(*c))?,
                Op::GatherRows(x, rows) => {
                    let src = self.value(*x);
                    let mut out = DenseMatrix::zeros(src.rows(), src.cols());
                    for (k, &r) in rows.iter().enumerate() {
                        for (o, v) in out.row_mut(r).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *x, out)?;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).rows();
                        accumulate(&mut adj, p, g.slice_rows(start, start + n)?)?;
                        start += n;
                    }
                }
                Op::RowL2Normalize(x, norms) => {
                    let y = &node.value;
                    let mut out = DenseMatrix::zeros(y.rows(), y.cols());
                    for (r, &n) in norms.iter().enumerate() {
                        normalize_backward_row(y.row(r), n, g.row(r), out.row_mut(r));
                    }
                    accumulate(&mut adj, *x, out)?;
                }
                Op::MeanOf(parts) => {
                    let share = g.scale(1.0 / parts.len() as f64);
                    for &p in parts {
                        accumulate(&mut adj, p, share.clone())?;
                    }
                }
                Op::RowwiseDot(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = DenseMatrix::zeros(va.rows(), va.cols());
                    let mut gb = DenseMatrix::zeros(vb.rows(), vb.cols());
                    for r in 0..va.rows() {
                        let w = g.get(r, 0);
                        for (o, x) in ga.row_mut(r).iter_mut().zip(vb.row(r)) {
                            *o = w * x;
                        }
                        for (o, x) in gb.row_mut(r).iter_mut().zip(va.row(r)) {
                            *o = w * x;
                        }
                    }
                    accumulate(&mut adj, *a, ga)?;
                    accumulate(&mut adj, *b, gb)?;
                }
                Op::LogSigmoid(x) => {
                    let v = self.value(*x);
                    let data = v
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&z, &gv)| gv * sigmoid(-z))
                        .collect();
                    accumulate(
                        &mut adj,
                        *x,
                        DenseMatrix::from_vec(v.rows(), v.cols(), data)?,
                    )?;
                }
                Op::Contrastive(spec) => {
                    let (vh, ve) = (self.value(spec.view), self.value(spec.fused));
                    let (nh, ne) = (row_norms(vh), row_norms(ve));
                    let (uh, ue) = (normalize_with_norms(vh, &nh), normalize_with_norms(ve, &ne));
                    let (_, grads) = contrastive_core(&uh, &ue, spec, Some(g.get(0, 0)));
                    let (gh_unit, ge_unit) = grads.expect("gradients requested");
                    let mut gh = DenseMatrix::zeros(vh.rows(), vh.cols());
                    let mut ge = DenseMatrix::zeros(ve.rows(), ve.cols());
                    for r in 0..vh.rows() {
                        normalize_backward_row(uh.row(r), nh[r], gh_unit.row(r), gh.row_mut(r));
                        normalize_backward_row(ue.row(r), ne[r], ge_unit.row(r), ge.row_mut(r));
                    }
                    accumulate(&mut adj, spec.view, gh)?;
                    accumulate(&mut adj, spec.fused, ge)?;
                }
                Op::Sum(x) => {
                    let v = self.value(*x);
                    accumulate(
                        &mut adj,
                        *x,
                        DenseMatrix::filled(v.rows(), v.cols(), g.get(0, 0)),
                    )?;
                }
                Op::FrobeniusSq(x) => {
                    accumulate(&mut adj, *x, self.value(*x).scale(2.0 * g.get(0, 0)))?;
                }
            }
        }
        Ok(Gradients { by_leaf })
    }
}
