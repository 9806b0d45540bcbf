use std::fmt::Debug;

use super::dense::DenseMatrix;
use super::sparse::{spmm, SparseCsr};
use crate::error::{Error, Result};

/// A fixed symmetric linear map on row-stacked node embeddings.
///
/// Symmetry makes every implementor its own adjoint, which is what the
/// autograd tape relies on when it pushes gradients back through `apply`.
pub trait SymmetricOperator: Debug + Send + Sync {
    /// Number of nodes (rows) the operator acts on.
    fn dim(&self) -> usize;

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix>;

    /// Dense matrix of the operator, obtained by applying it to the identity.
    fn to_dense(&self) -> DenseMatrix {
        self.apply(&DenseMatrix::identity(self.dim()))
            .expect("identity has matching shape")
    }
}

fn inv_sqrt(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

fn scale_rows(x: &mut DenseMatrix, factors: &[f64]) {
    for (r, &f) in factors.iter().enumerate() {
        for v in x.row_mut(r) {
            *v *= f;
        }
    }
}

/// Degree-normalised hypergraph propagation `D^{-1/2} B W B^T D^{-1/2}`.
///
/// `B` is the node-by-hyperedge incidence matrix. `W` is the identity, or
/// `diag(1/δ(e))` in HGNN style. Node degrees are row sums of `B W B^T`,
/// computed as `B · (W · colsum(B))` so the node-by-node product is never
/// formed. Nodes with zero degree map to zero rows.
#[derive(Clone, Debug)]
pub struct PropagationOperator {
    incidence: SparseCsr,
    incidence_t: SparseCsr,
    inv_sqrt_deg: Vec<f64>,
    inv_edge_deg: Option<Vec<f64>>,
}

impl PropagationOperator {
    pub fn new(incidence: SparseCsr, hgnn_style: bool) -> Result<Self> {
        if !incidence.is_nonnegative() {
            return Err(Error::Parameter(
                "hypergraph incidence must be nonnegative".into(),
            ));
        }
        let edge_deg = incidence.col_sums();
        let inv_edge_deg = hgnn_style.then(|| {
            edge_deg
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
                .collect::<Vec<_>>()
        });
        let weighted: Vec<f64> = match &inv_edge_deg {
            Some(w) => edge_deg.iter().zip(w).map(|(d, w)| d * w).collect(),
            None => edge_deg,
        };
        let node_deg = incidence.mul_vec(&weighted)?;
        let inv_sqrt_deg = node_deg.into_iter().map(inv_sqrt).collect();
        let incidence_t = incidence.transpose();
        Ok(Self {
            incidence,
            incidence_t,
            inv_sqrt_deg,
            inv_edge_deg,
        })
    }

    pub fn incidence(&self) -> &SparseCsr {
        &self.incidence
    }

    pub fn inv_sqrt_degrees(&self) -> &[f64] {
        &self.inv_sqrt_deg
    }

    pub fn is_hgnn_style(&self) -> bool {
        self.inv_edge_deg.is_some()
    }

    pub fn num_hyperedges(&self) -> usize {
        self.incidence.cols()
    }
}

impl SymmetricOperator for PropagationOperator {
    fn dim(&self) -> usize {
        self.incidence.rows()
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.dim() {
            return Err(Error::shape(
                "apply_operator",
                format!("operator on {} nodes given {} rows", self.dim(), x.rows()),
            ));
        }
        let mut y = x.clone();
        scale_rows(&mut y, &self.inv_sqrt_deg);
        let mut edges = spmm(&self.incidence_t, &y)?;
        if let Some(w) = &self.inv_edge_deg {
            scale_rows(&mut edges, w);
        }
        let mut out = spmm(&self.incidence, &edges)?;
        scale_rows(&mut out, &self.inv_sqrt_deg);
        Ok(out)
    }
}

/// Symmetric-normalised user-item adjacency over `M + N` stacked nodes:
/// `D^{-1/2} [[0, A], [A^T, 0]] D^{-1/2}`. Users occupy the first `M` rows.
#[derive(Clone, Debug)]
pub struct BipartiteOperator {
    adjacency: SparseCsr,
    adjacency_t: SparseCsr,
    inv_sqrt_user: Vec<f64>,
    inv_sqrt_item: Vec<f64>,
}

impl BipartiteOperator {
    pub fn new(adjacency: SparseCsr) -> Self {
        let inv_sqrt_user = adjacency.row_sums().into_iter().map(inv_sqrt).collect();
        let inv_sqrt_item = adjacency.col_sums().into_iter().map(inv_sqrt).collect();
        let adjacency_t = adjacency.transpose();
        Self {
            adjacency,
            adjacency_t,
            inv_sqrt_user,
            inv_sqrt_item,
        }
    }

    pub fn num_users(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn num_items(&self) -> usize {
        self.adjacency.cols()
    }

    pub fn adjacency(&self) -> &SparseCsr {
        &self.adjacency
    }
}

impl SymmetricOperator for BipartiteOperator {
    fn dim(&self) -> usize {
        self.num_users() + self.num_items()
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.dim() {
            return Err(Error::shape(
                "apply_backbone",
                format!("operator on {} nodes given {} rows", self.dim(), x.rows()),
            ));
        }
        let m = self.num_users();
        let mut users = x.slice_rows(0, m)?;
        let mut items = x.slice_rows(m, x.rows())?;
        scale_rows(&mut users, &self.inv_sqrt_user);
        scale_rows(&mut items, &self.inv_sqrt_item);
        let mut to_users = spmm(&self.adjacency, &items)?;
        let mut to_items = spmm(&self.adjacency_t, &users)?;
        scale_rows(&mut to_users, &self.inv_sqrt_user);
        scale_rows(&mut to_items, &self.inv_sqrt_item);
        DenseMatrix::vstack(&[&to_users, &to_items])
    }
}
