//! BPR ranking loss, the two cross-view contrastive terms, L2 penalty and
//! their weighted sum.

use serde::{Deserialize, Serialize};

use crate::autograd::{NodeId, Tape};
use crate::config::{ContrastScope, ModelConfig};
use crate::error::{Error, Result};
use crate::model::{ForwardOutputs, ParamLeaves};

/// `(user, positive item, negative item)` training triples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleBatch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl TripleBatch {
    pub fn from_triples(triples: &[(usize, usize, usize)]) -> Self {
        let mut b = Self::default();
        for &(u, i, j) in triples {
            b.push(u, i, j);
        }
        b
    }

    pub fn push(&mut self, user: usize, positive: usize, negative: usize) {
        self.users.push(user);
        self.positives.push(positive);
        self.negatives.push(negative);
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.len()).map(|k| (self.users[k], self.positives[k], self.negatives[k]))
    }

    /// Distinct users of the batch, ascending.
    pub fn unique_users(&self) -> Vec<usize> {
        let mut v = self.users.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Distinct positive and negative items of the batch, ascending.
    pub fn unique_items(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .positives
            .iter()
            .chain(&self.negatives)
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// `−Σ ln σ(ŷ_ui − ŷ_uj)` over the batch (summed, not averaged).
pub fn bpr_loss(
    tape: &mut Tape,
    fused_u: NodeId,
    fused_i: NodeId,
    batch: &TripleBatch,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::Empty("BPR loss needs at least one triple".into()));
    }
    let u = tape.gather_rows(fused_u, &batch.users)?;
    let i = tape.gather_rows(fused_i, &batch.positives)?;
    let j = tape.gather_rows(fused_i, &batch.negatives)?;
    let pos = tape.rowwise_dot(u, i)?;
    let neg = tape.rowwise_dot(u, j)?;
    let neg = tape.scale(neg, -1.0)?;
    let margin = tape.add(pos, neg)?;
    let ls = tape.log_sigmoid(margin)?;
    let total = tape.sum(ls)?;
    tape.scale(total, -1.0)
}

/// Cross-view contrastive loss between a hypergraph view and the fused
/// embeddings, summed over `indices` as anchors. `scope` picks the
/// denominator set: the anchors themselves, or every row.
pub fn scl_loss(
    tape: &mut Tape,
    view: NodeId,
    fused: NodeId,
    indices: &[usize],
    tau: f64,
    scope: ContrastScope,
) -> Result<NodeId> {
    match scope {
        ContrastScope::Batch => tape.contrastive(view, fused, indices, indices, tau),
        ContrastScope::Full => {
            let all: Vec<usize> = (0..tape.value(fused).rows()).collect();
            tape.contrastive(view, fused, indices, &all, tau)
        }
    }
}

/// `λ · Σ ‖table‖²_F` over the four parameter tables.
pub fn l2_penalty(tape: &mut Tape, leaves: &ParamLeaves, lambda: f64) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for leaf in leaves.all() {
        let sq = tape.frobenius_sq(leaf)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq)?,
        });
    }
    tape.scale(acc.expect("four tables"), lambda)
}

/// `bpr + α·scl_u + β·scl_i + reg`; absent contrastive terms count as zero.
pub fn total_loss(
    tape: &mut Tape,
    bpr: NodeId,
    scl_u: Option<NodeId>,
    scl_i: Option<NodeId>,
    reg: NodeId,
    alpha: f64,
    beta: f64,
) -> Result<NodeId> {
    let mut total = tape.add(bpr, reg)?;
    if let Some(s) = scl_u {
        let w = tape.scale(s, alpha)?;
        total = tape.add(total, w)?;
    }
    if let Some(s) = scl_i {
        let w = tape.scale(s, beta)?;
        total = tape.add(total, w)?;
    }
    Ok(total)
}

/// Unweighted loss components plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub scl_user: f64,
    pub scl_item: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.bpr += other.bpr;
        self.scl_user += other.scl_user;
        self.scl_item += other.scl_item;
        self.reg += other.reg;
        self.total += other.total;
    }
}

/// Records the full training objective for one batch on the forward tape.
///
/// The user contrastive term is skipped when its weight is zero (no
/// contrastive module or no user hypergraph); likewise for items.
pub fn record_objective(
    out: &mut ForwardOutputs,
    batch: &TripleBatch,
    config: &ModelConfig,
) -> Result<(NodeId, LossBreakdown)> {
    let tape = &mut out.tape;
    let bpr = bpr_loss(tape, out.fused_u, out.fused_i, batch)?;
    let (alpha, beta) = (config.effective_alpha(), config.effective_beta());
    let scl_u = if config.use_scl && config.use_u2u {
        Some(scl_loss(
            tape,
            out.h_u,
            out.fused_u,
            &batch.unique_users(),
            config.tau,
            config.contrast_scope,
        )?)
    } else {
        None
    };
    let scl_i = if config.use_scl && config.use_i2i {
        Some(scl_loss(
            tape,
            out.h_i,
            out.fused_i,
            &batch.unique_items(),
            config.tau,
            config.contrast_scope,
        )?)
    } else {
        None
    };
    let reg = l2_penalty(tape, &out.leaves, config.l2_reg)?;
    let total = total_loss(tape, bpr, scl_u, scl_i, reg, alpha, beta)?;
    let breakdown = LossBreakdown {
        bpr: tape.scalar(bpr),
        scl_user: scl_u.map_or(0.0, |s| tape.scalar(s)),
        scl_item: scl_i.map_or(0.0, |s| tape.scalar(s)),
        reg: tape.scalar(reg),
        total: tape.scalar(total),
    };
    Ok((total, breakdown))
}
