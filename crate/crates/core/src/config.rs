//! Model and training hyperparameters, with the published per-dataset presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which rows the contrastive denominator ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastScope {
    /// Users (items) that appear in the current batch.
    Batch,
    /// Every user (item).
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub u2u_layers: usize,
    pub i2i_layers: usize,
    pub backbone_layers: usize,
    /// Neighbours kept per item and modality in the item-item hypergraph.
    pub knn_k: usize,
    /// Weight of the user-side contrastive term.
    pub alpha: f64,
    /// Weight of the item-side contrastive term.
    pub beta: f64,
    pub tau: f64,
    pub l2_reg: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub use_u2u: bool,
    pub use_i2i: bool,
    pub use_scl: bool,
    pub hgnn_style: bool,
    pub contrast_scope: ContrastScope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiktok,
    Clothing,
    Sports,
    Synthetic,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Tiktok => "tiktok",
            Preset::Clothing => "clothing",
            Preset::Sports => "sports",
            Preset::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiktok" => Ok(Preset::Tiktok),
            "clothing" => Ok(Preset::Clothing),
            "sports" => Ok(Preset::Sports),
            "synthetic" => Ok(Preset::Synthetic),
            other => Err(Error::Parameter(format!("unknown preset `{other}`"))),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Preset::Tiktok)
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let base = Self {
            embedding_dim: 64,
            u2u_layers: 2,
            i2i_layers: 2,
            backbone_layers: 2,
            knn_k: 5,
            alpha: 0.1,
            beta: 0.7,
            tau: 0.5,
            l2_reg: 1e-3,
            learning_rate: 1e-4,
            batch_size: 1024,
            max_epochs: 250,
            patience: 5,
            seed: 2024,
            use_u2u: true,
            use_i2i: true,
            use_scl: true,
            hgnn_style: false,
            contrast_scope: ContrastScope::Batch,
        };
        match preset {
            Preset::Tiktok => Self {
                knn_k: 5,
                alpha: 0.03,
                beta: 0.07,
                tau: 0.6,
                l2_reg: 1e-3,
                u2u_layers: 3,
                i2i_layers: 2,
                ..base
            },
            Preset::Clothing => Self {
                knn_k: 10,
                alpha: 0.1,
                beta: 0.7,
                tau: 0.4,
                l2_reg: 1e-3,
                ..base
            },
            Preset::Sports => Self {
                knn_k: 5,
                alpha: 0.3,
                beta: 0.7,
                tau: 0.5,
                l2_reg: 1e-5,
                ..base
            },
            // desk-scale corpus: a few hundred interactions per epoch
            Preset::Synthetic => Self {
                embedding_dim: 32,
                knn_k: 5,
                alpha: 0.1,
                beta: 0.1,
                tau: 0.5,
                l2_reg: 1e-4,
                learning_rate: 1e-2,
                batch_size: 128,
                max_epochs: 50,
                patience: 10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be >= 1".into());
        }
        if self.knn_k == 0 {
            return fail("knn_k must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("l2_reg", self.l2_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be >= 1".into());
        }
        Ok(())
    }

    /// Contrastive weights after ablation: both are zero without the contrastive module.
    pub fn effective_alpha(&self) -> f64 {
        if self.use_scl && self.use_u2u {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.use_scl && self.use_i2i {
            self.beta
        } else {
            0.0
        }
    }
}
