//! Construction of the three fixed propagation structures: the user-user
//! hypergraph (items as hyperedges), the item-item multimodal hypergraph
//! (per-modality KNN lists as hyperedges) and the bipartite backbone graph.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cosine_topk, BipartiteOperator, DenseMatrix, PropagationOperator, SparseCsr, SymmetricOperator,
};

/// Content modality of an item feature block. The declaration order fixes the
/// hyperedge layout of the item-item incidence matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityTag {
    Visual,
    Acoustic,
    Textual,
}

impl ModalityTag {
    pub const ALL: [ModalityTag; 3] = [Self::Visual, Self::Acoustic, Self::Textual];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Visual => "visual",
            Self::Acoustic => "acoustic",
            Self::Textual => "textual",
        }
    }
}

impl fmt::Display for ModalityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" | "v" => Ok(Self::Visual),
            "acoustic" | "a" => Ok(Self::Acoustic),
            "textual" | "t" => Ok(Self::Textual),
            other => Err(Error::Parameter(format!("unknown modality `{other}`"))),
        }
    }
}

/// Item feature matrices, one per modality, kept in tag order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityBundle {
    blocks: Vec<(ModalityTag, DenseMatrix)>,
}

impl ModalityBundle {
    pub fn new(mut blocks: Vec<(ModalityTag, DenseMatrix)>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::Empty("at least one modality is required".into()));
        };
        let n = first.1.rows();
        if let Some((tag, m)) = blocks.iter().find(|(_, m)| m.rows() != n) {
            return Err(Error::shape(
                "ModalityBundle",
                format!("{tag} features have {} rows, expected {n}", m.rows()),
            ));
        }
        blocks.sort_by_key(|(tag, _)| *tag);
        if blocks.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Parameter("duplicate modality tag".into()));
        }
        Ok(Self { blocks })
    }

    pub fn num_items(&self) -> usize {
        self.blocks[0].1.rows()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModalityTag, &DenseMatrix)> {
        self.blocks.iter().map(|(t, m)| (*t, m))
    }

    pub fn get(&self, tag: ModalityTag) -> Option<&DenseMatrix> {
        self.blocks.iter().find(|(t, _)| *t == tag).map(|(_, m)| m)
    }
}

/// User-user hypergraph: users are nodes, items are hyperedges, incidence `A`.
pub fn build_u2u(interactions: &SparseCsr, hgnn_style: bool) -> Result<PropagationOperator> {
    if interactions.rows() == 0 || interactions.nnz() == 0 {
        return Err(Error::Empty(
            "user-user hypergraph needs at least one interaction".into(),
        ));
    }
    PropagationOperator::new(interactions.clone(), hgnn_style)
}

/// Per-modality KNN incidence blocks concatenated side by side, in tag order.
pub fn i2i_incidence(features: &ModalityBundle, k: usize) -> Result<SparseCsr> {
    let blocks: Vec<SparseCsr> = features
        .blocks
        .par_iter()
        .map(|(_, f)| cosine_topk(f, k))
        .collect::<Result<_>>()?;
    let refs: Vec<&SparseCsr> = blocks.iter().collect();
    SparseCsr::hstack(&refs)
}

/// Item-item hypergraph over `N` nodes and `N · |modalities|` hyperedges.
/// Depends on item features only, never on interactions.
pub fn build_i2i(
    features: &ModalityBundle,
    k: usize,
    hgnn_style: bool,
) -> Result<PropagationOperator> {
    PropagationOperator::new(i2i_incidence(features, k)?, hgnn_style)
}

pub fn build_backbone(interactions: &SparseCsr) -> BipartiteOperator {
    BipartiteOperator::new(interactions.clone())
}

/// The three operators one model run propagates over.
#[derive(Clone, Debug)]
pub struct GraphSet {
    pub u2u: Arc<PropagationOperator>,
    pub i2i: Arc<PropagationOperator>,
    pub backbone: Arc<BipartiteOperator>,
}

impl GraphSet {
    pub fn build(
        train: &SparseCsr,
        features: &ModalityBundle,
        k: usize,
        hgnn_style: bool,
    ) -> Result<Self> {
        let i2i = build_i2i(features, k, hgnn_style)?;
        Self::from_parts(train, i2i, hgnn_style)
    }

    /// Assembles a set from a prebuilt item-item operator, e.g. one loaded from disk.
    pub fn from_parts(
        train: &SparseCsr,
        i2i: PropagationOperator,
        hgnn_style: bool,
    ) -> Result<Self> {
        if i2i.dim() != train.cols() {
            return Err(Error::shape(
                "GraphSet",
                format!(
                    "item-item graph has {} nodes but interactions have {} items",
                    i2i.dim(),
                    train.cols()
                ),
            ));
        }
        Ok(Self {
            u2u: Arc::new(build_u2u(train, hgnn_style)?),
            i2i: Arc::new(i2i),
            backbone: Arc::new(build_backbone(train)),
        })
    }

    pub fn num_users(&self) -> usize {
        self.backbone.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.backbone.num_items()
    }
}
