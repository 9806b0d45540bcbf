//! Multimodal hypergraph contrastive recommendation.
//!
//! Users and items get two views: a LightGCN-style backbone over the
//! interaction graph and linear propagation on derived user-user and
//! item-item hypergraphs. The views are fused by adding the unit-normalised
//! hypergraph embedding, trained with BPR plus a cross-view contrastive term,
//! and evaluated by full-ranking Recall/Precision/NDCG@K.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod trainer;

pub use config::{ContrastScope, ModelConfig, Preset};
pub use error::{Error, Result};
pub use graph::{GraphSet, ModalityBundle, ModalityTag};
pub use linalg::{DenseMatrix, SparseCsr};
pub use model::ModelParams;
