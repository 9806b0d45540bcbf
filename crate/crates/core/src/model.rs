//! Forward pass: hypergraph propagation on both sides, LightGCN-style
//! backbone propagation, fusion and inner-product scoring.

use std::sync::Arc;

use crate::autograd::{NodeId, Tape};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::GraphSet;
use crate::linalg::{row_l2_normalize, xavier_init, DenseMatrix, SymmetricOperator};

pub const TABLE_NAMES: [&str; 4] = [
    "user_embedding",
    "item_embedding",
    "user_hypergraph",
    "item_hypergraph",
];

/// The four trainable embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Backbone user table `E_u`, `M x d`.
    pub user_emb: DenseMatrix,
    /// Backbone item table `E_i`, `N x d`.
    pub item_emb: DenseMatrix,
    /// Layer-0 input of the user-user hypergraph, `M x d`.
    pub user_hyper: DenseMatrix,
    /// Layer-0 input of the item-item hypergraph, `N x d`.
    pub item_hyper: DenseMatrix,
}

impl ModelParams {
    /// Xavier-initialises all tables from one seed; each table draws from its own stream.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        let stream = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self {
            user_emb: xavier_init(num_users, dim, stream(1)),
            item_emb: xavier_init(num_items, dim, stream(2)),
            user_hyper: xavier_init(num_users, dim, stream(3)),
            item_hyper: xavier_init(num_items, dim, stream(4)),
        }
    }

    pub fn from_tables(tables: [DenseMatrix; 4]) -> Result<Self> {
        let [user_emb, item_emb, user_hyper, item_hyper] = tables;
        let p = Self {
            user_emb,
            item_emb,
            user_hyper,
            item_hyper,
        };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (m, n, d) = (self.num_users(), self.num_items(), self.dim());
        let ok = self.user_hyper.shape() == (m, d)
            && self.item_emb.cols() == d
            && self.item_hyper.shape() == (n, d);
        if !ok || d == 0 {
            return Err(Error::shape(
                "ModelParams",
                format!(
                    "tables {:?} {:?} {:?} {:?}",
                    self.user_emb.shape(),
                    self.item_emb.shape(),
                    self.user_hyper.shape(),
                    self.item_hyper.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn tables(&self) -> [(&'static str, &DenseMatrix); 4] {
        [
            (TABLE_NAMES[0], &self.user_emb),
            (TABLE_NAMES[1], &self.item_emb),
            (TABLE_NAMES[2], &self.user_hyper),
            (TABLE_NAMES[3], &self.item_hyper),
        ]
    }

    pub fn tables_mut(&mut self) -> [(&'static str, &mut DenseMatrix); 4] {
        [
            (TABLE_NAMES[0], &mut self.user_emb),
            (TABLE_NAMES[1], &mut self.item_emb),
            (TABLE_NAMES[2], &mut self.user_hyper),
            (TABLE_NAMES[3], &mut self.item_hyper),
        ]
    }
}

/// Tape ids of the four parameter leaves, in [`TABLE_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct ParamLeaves {
    pub user_emb: NodeId,
    pub item_emb: NodeId,
    pub user_hyper: NodeId,
    pub item_hyper: NodeId,
}

impl ParamLeaves {
    pub fn all(&self) -> [NodeId; 4] {
        [
            self.user_emb,
            self.item_emb,
            self.user_hyper,
            self.item_hyper,
        ]
    }
}

/// Everything one forward pass produced, all recorded on `tape`.
#[derive(Debug)]
pub struct ForwardOutputs {
    pub tape: Tape,
    pub leaves: ParamLeaves,
    /// Hypergraph view of users (zero under the user-hypergraph ablation).
    pub h_u: NodeId,
    pub h_i: NodeId,
    /// Backbone outputs before fusion.
    pub e_u: NodeId,
    pub e_i: NodeId,
    /// Fused embeddings used for scoring.
    pub fused_u: NodeId,
    pub fused_i: NodeId,
}

impl ForwardOutputs {
    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        self.tape.value(id)
    }

    pub fn fused(&self) -> (&DenseMatrix, &DenseMatrix) {
        (self.tape.value(self.fused_u), self.tape.value(self.fused_i))
    }
}

/// `L` linear hypergraph layers without activation; the last layer is the readout.
pub fn propagate_hypergraph(
    op: &dyn SymmetricOperator,
    h0: &DenseMatrix,
    layers: usize,
) -> Result<DenseMatrix> {
    let mut h = h0.clone();
    if h.rows() != op.dim() {
        return Err(Error::shape(
            "propagate_hypergraph",
            format!("{} rows for an operator on {} nodes", h.rows(), op.dim()),
        ));
    }
    for _ in 0..layers {
        h = op.apply(&h)?;
    }
    Ok(h)
}

/// LightGCN propagation with layer-mean readout; returns `(e_u, e_i)`.
pub fn propagate_backbone(
    op: &dyn SymmetricOperator,
    user_emb: &DenseMatrix,
    item_emb: &DenseMatrix,
    layers: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let stacked = DenseMatrix::vstack(&[user_emb, item_emb])?;
    if stacked.rows() != op.dim() {
        return Err(Error::shape(
            "propagate_backbone",
            format!(
                "{} rows for an operator on {} nodes",
                stacked.rows(),
                op.dim()
            ),
        ));
    }
    let mut acc = stacked.clone();
    let mut x = stacked;
    for _ in 0..layers {
        x = op.apply(&x)?;
        acc.add_assign(&x)?;
    }
    let mean = if layers == 0 {
        acc
    } else {
        acc.scale(1.0 / (layers + 1) as f64)
    };
    let m = user_emb.rows();
    Ok((mean.slice_rows(0, m)?, mean.slice_rows(m, mean.rows())?))
}

/// `e + h / ‖h‖` row by row; zero rows of `h` add nothing.
pub fn fuse(e: &DenseMatrix, h: &DenseMatrix) -> Result<DenseMatrix> {
    e.add(&row_l2_normalize(h))
}

pub fn score_pairs(
    fused_u: &DenseMatrix,
    fused_i: &DenseMatrix,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if fused_u.cols() != fused_i.cols() {
        return Err(Error::shape(
            "score_pairs",
            format!("dims {} and {}", fused_u.cols(), fused_i.cols()),
        ));
    }
    pairs
        .iter()
        .map(|&(u, i)| {
            if u >= fused_u.rows() || i >= fused_i.rows() {
                return Err(Error::shape(
                    "score_pairs",
                    format!("pair ({u}, {i}) out of range"),
                ));
            }
            Ok(fused_u
                .row(u)
                .iter()
                .zip(fused_i.row(i))
                .map(|(a, b)| a * b)
                .sum())
        })
        .collect()
}

fn tape_hypergraph(
    tape: &mut Tape,
    op: Arc<dyn SymmetricOperator>,
    h0: NodeId,
    layers: usize,
) -> Result<NodeId> {
    let mut h = h0;
    for _ in 0..layers {
        h = tape.apply(op.clone(), h)?;
    }
    Ok(h)
}

fn tape_backbone(
    tape: &mut Tape,
    op: Arc<dyn SymmetricOperator>,
    user_emb: NodeId,
    item_emb: NodeId,
    layers: usize,
) -> Result<(NodeId, NodeId)> {
    let (m, n) = (tape.value(user_emb).rows(), tape.value(item_emb).rows());
    let stacked = tape.concat_rows(&[user_emb, item_emb])?;
    let readout = if layers == 0 {
        stacked
    } else {
        let mut outputs = vec![stacked];
        let mut x = stacked;
        for _ in 0..layers {
            x = tape.apply(op.clone(), x)?;
            outputs.push(x);
        }
        tape.mean_of(&outputs)?
    };
    let users: Vec<usize> = (0..m).collect();
    let items: Vec<usize> = (m..m + n).collect();
    Ok((
        tape.gather_rows(readout, &users)?,
        tape.gather_rows(readout, &items)?,
    ))
}

/// Records the full forward computation on a fresh tape.
pub fn forward(
    params: &ModelParams,
    graphs: &GraphSet,
    config: &ModelConfig,
) -> Result<ForwardOutputs> {
    params.check_shapes()?;
    if params.num_users() != graphs.num_users() || params.num_items() != graphs.num_items() {
        return Err(Error::shape(
            "forward",
            format!(
                "params for {}x{} but graphs for {}x{}",
                params.num_users(),
                params.num_items(),
                graphs.num_users(),
                graphs.num_items()
            ),
        ));
    }
    let d = params.dim();
    let mut tape = Tape::new();
    let leaves = ParamLeaves {
        user_emb: tape.leaf(params.user_emb.clone()),
        item_emb: tape.leaf(params.item_emb.clone()),
        user_hyper: tape.leaf(params.user_hyper.clone()),
        item_hyper: tape.leaf(params.item_hyper.clone()),
    };

    let h_u = if config.use_u2u {
        tape_hypergraph(
            &mut tape,
            graphs.u2u.clone(),
            leaves.user_hyper,
            config.u2u_layers,
        )?
    } else {
        tape.constant(DenseMatrix::zeros(params.num_users(), d))
    };
    let h_i = if config.use_i2i {
        tape_hypergraph(
            &mut tape,
            graphs.i2i.clone(),
            leaves.item_hyper,
            config.i2i_layers,
        )?
    } else {
        tape.constant(DenseMatrix::zeros(params.num_items(), d))
    };
    let (e_u, e_i) = tape_backbone(
        &mut tape,
        graphs.backbone.clone(),
        leaves.user_emb,
        leaves.item_emb,
        config.backbone_layers,
    )?;
    let hu_unit = tape.row_l2_normalize(h_u)?;
    let fused_u = tape.add(e_u, hu_unit)?;
    let hi_unit = tape.row_l2_normalize(h_i)?;
    let fused_i = tape.add(e_i, hi_unit)?;

    Ok(ForwardOutputs {
        tape,
        leaves,
        h_u,
        h_i,
        e_u,
        e_i,
        fused_u,
        fused_i,
    })
}
