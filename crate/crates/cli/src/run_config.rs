//! The JSON run configuration and its resolution into a [`ModelConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mmhcl::dataset::{SplitMode, SyntheticSpec};
use mmhcl::{ModalityTag, ModelConfig, Preset};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Where interactions and item features come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// A TSV interaction log and one feature file per modality. Raw item
    /// ids must be integers indexing the feature rows.
    Files {
        interactions: PathBuf,
        features: BTreeMap<ModalityTag, PathBuf>,
    },
    /// A generated planted-community corpus.
    Synthetic(SyntheticSpec),
}

fn default_preset() -> Preset {
    Preset::Tiktok
}

fn default_split_seed() -> u64 {
    2024
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    /// Field overrides applied on top of the preset.
    #[serde(default)]
    pub model: serde_json::Map<String, Value>,
    pub data: DataSource,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    /// Share of items made cold for the cold-start protocol.
    #[serde(default)]
    pub cold_start: Option<f64>,
    /// Sweep grid: model field name to candidate values.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<Value>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    U2u,
    I2i,
    Scl,
}

/// Command-line overrides shared by all commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ablate: Vec<Ablation>,
    pub cold_start: Option<f64>,
    pub preset: Option<Preset>,
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.output_dir);
        if let DataSource::Files {
            interactions,
            features,
        } = &mut cfg.data
        {
            rebase(interactions);
            features.values_mut().for_each(rebase);
        }
        Ok(cfg)
    }
}

/// A run config with all overrides folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub cold_start: Option<f64>,
}

/// Applies `overrides` (a JSON object of model fields) to `base`.
pub fn apply_model_overrides(
    base: &ModelConfig,
    overrides: &serde_json::Map<String, Value>,
) -> CliResult<ModelConfig> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    for (key, val) in overrides {
        if !obj.contains_key(key) {
            return Err(CliError::Config(format!("unknown model field `{key}`")));
        }
        obj.insert(key.clone(), val.clone());
    }
    let cfg: ModelConfig =
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("model overrides: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_ablations(cfg: &mut ModelConfig, ablate: &[Ablation]) {
    for a in ablate {
        match a {
            Ablation::U2u => cfg.use_u2u = false,
            Ablation::I2i => cfg.use_i2i = false,
            Ablation::Scl => {
                cfg.use_scl = false;
                cfg.alpha = 0.0;
                cfg.beta = 0.0;
            }
        }
    }
}

pub fn resolve(run: RunConfig, ov: &Overrides) -> CliResult<Resolved> {
    let preset = ov.preset.unwrap_or(run.preset);
    let mut model = apply_model_overrides(&ModelConfig::preset(preset), &run.model)?;
    if let Some(seed) = ov.seed {
        model.seed = seed;
    }
    apply_ablations(&mut model, &ov.ablate);
    let cold_start = ov.cold_start.or(run.cold_start);
    if let Some(r) = cold_start {
        if !(r > 0.0 && r < 1.0) {
            return Err(CliError::Config(format!(
                "cold-start ratio must lie in (0, 1), got {r}"
            )));
        }
    }
    Ok(Resolved {
        run,
        model,
        cold_start,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest binding a trained model to its config and prepared data. The
/// output directory does not take part.
pub fn config_digest(r: &Resolved, data_digest: &str) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model: &'a ModelConfig,
        split_mode: SplitMode,
        split_seed: u64,
        cold_start: Option<f64>,
        data_digest: &'a str,
    }
    // serde_json maps are key-sorted, so the Value round trip canonicalises
    let value = serde_json::to_value(Canonical {
        model: &r.model,
        split_mode: r.run.split_mode,
        split_seed: r.run.split_seed,
        cold_start: r.cold_start,
        data_digest,
    })
    .expect("digest input serializes");
    sha256_hex(value.to_string().as_bytes())
}
