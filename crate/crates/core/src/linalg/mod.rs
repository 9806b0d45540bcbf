//! Dense and CSR containers plus the kernels the rest of the crate composes.

pub(crate) mod dense;
mod operator;
mod sparse;

pub use dense::{row_l2_normalize, xavier_init, DenseMatrix};
pub use operator::{BipartiteOperator, PropagationOperator, SymmetricOperator};
pub use sparse::{cosine_topk, spmm, SparseCsr};
