//! The four commands: prepare, train, evaluate, sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mmhcl::checkpoint::{load_checkpoint, save_checkpoint};
use mmhcl::dataset::{
    generate_synthetic, load_feature_matrix, load_interactions, make_split, read_csr, read_pairs,
    write_csr, write_pairs, DataSplit, InteractionLog, SplitMode,
};
use mmhcl::evaluator::{
    evaluate_cold, evaluate_embeddings, make_cold_start_split, ColdStartSplit, MetricMeans,
    MetricsReport,
};
use mmhcl::graph::i2i_incidence;
use mmhcl::linalg::PropagationOperator;
use mmhcl::model::forward;
use mmhcl::trainer::{train_model, TrainReport};
use mmhcl::{GraphSet, ModalityBundle, ModelConfig, SparseCsr};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{data_at, CliError, CliResult};
use crate::run_config::{apply_model_overrides, config_digest, sha256_hex, DataSource, Resolved};

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_PAIRS: &str = "train.tsv";
pub const VALID_PAIRS: &str = "valid.tsv";
pub const TEST_PAIRS: &str = "test.tsv";
pub const USER_IDS: &str = "user_ids.tsv";
pub const ITEM_IDS: &str = "item_ids.tsv";
pub const U2U_INCIDENCE: &str = "u2u_incidence.csr";
pub const I2I_INCIDENCE: &str = "i2i_incidence.csr";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const METRICS: &str = "metrics.json";
pub const SWEEP_TABLE: &str = "sweep.csv";

/// Monitor cutoff for early stopping.
pub const VALIDATION_K: usize = 20;

const COLD_STREAM: u64 = 0xC01D_57A2_7000_0000;

/// Contents of `manifest.json` written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_users: usize,
    pub num_items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub knn_k: usize,
    /// Hash of the raw inputs (interaction and feature files, or the synthetic spec).
    pub data_digest: String,
    /// SHA-256 of every artifact, by file name.
    pub files: BTreeMap<String, String>,
}

pub struct Corpus {
    pub log: InteractionLog,
    pub features: ModalityBundle,
    pub data_digest: String,
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Loads interactions and features, or generates the synthetic corpus.
pub fn load_corpus(data: &DataSource) -> CliResult<Corpus> {
    match data {
        DataSource::Synthetic(spec) => {
            let (log, features) = generate_synthetic(spec)?;
            let spec_json = serde_json::to_value(spec)
                .expect("spec serializes")
                .to_string();
            Ok(Corpus {
                log,
                features,
                data_digest: sha256_hex(format!("synthetic\0{spec_json}").as_bytes()),
            })
        }
        DataSource::Files {
            interactions,
            features,
        } => {
            if features.is_empty() {
                return Err(CliError::Config(
                    "at least one feature file is required".into(),
                ));
            }
            let mut hasher = Sha256::new();
            hasher.update(b"interactions\0");
            hasher.update(read_bytes(interactions)?);
            let log = load_interactions(interactions).map_err(data_at(interactions))?;
            let mut blocks = Vec::with_capacity(features.len());
            for (&tag, path) in features {
                if !path.exists() {
                    return Err(CliError::Data(format!(
                        "{tag} feature file {} not found",
                        path.display()
                    )));
                }
                hasher.update(tag.as_str().as_bytes());
                hasher.update(b"\0");
                hasher.update(read_bytes(path)?);
                let raw = load_feature_matrix(path)
                    .map_err(|e| CliError::Data(format!("{tag} features: {e}")))?;
                let rows = item_rows(&log, raw.rows(), tag)?;
                blocks.push((tag, raw.gather_rows(&rows)?));
            }
            Ok(Corpus {
                log,
                features: ModalityBundle::new(blocks)?,
                data_digest: hex::encode(hasher.finalize()),
            })
        }
    }
}

/// Feature row of each dense item: the raw item id read as an integer.
fn item_rows(log: &InteractionLog, rows: usize, tag: mmhcl::ModalityTag) -> CliResult<Vec<usize>> {
    log.item_ids
        .iter()
        .map(|raw| match raw.parse::<usize>() {
            Ok(r) if r < rows => Ok(r),
            Ok(r) => Err(CliError::Data(format!(
                "item id {r} has no row in the {tag} features ({rows} rows)"
            ))),
            Err(_) => Err(CliError::Data(format!(
                "item id `{raw}` is not an integer row index into the {tag} features"
            ))),
        })
        .collect()
}

fn split_corpus(res: &Resolved, corpus: &Corpus) -> CliResult<DataSplit> {
    Ok(make_split(
        &corpus.log,
        res.run.split_seed,
        res.run.split_mode,
    )?)
}

/// Writes the split, id maps, both incidence matrices and the manifest.
pub fn prepare(res: &Resolved) -> CliResult<Manifest> {
    let out = &res.run.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let corpus = load_corpus(&res.run.data)?;
    let split = split_corpus(res, &corpus)?;

    for (name, pairs) in [
        (TRAIN_PAIRS, &split.train),
        (VALID_PAIRS, &split.validation),
        (TEST_PAIRS, &split.test),
    ] {
        let path = out.join(name);
        write_pairs(&path, pairs).map_err(data_at(&path))?;
    }
    for (name, ids) in [
        (USER_IDS, &corpus.log.user_ids),
        (ITEM_IDS, &corpus.log.item_ids),
    ] {
        let mut text = ids.join("\n");
        text.push('\n');
        write_bytes(&out.join(name), text.as_bytes())?;
    }
    let u2u_path = out.join(U2U_INCIDENCE);
    write_csr(&u2u_path, &split.train_matrix()?).map_err(data_at(&u2u_path))?;
    let i2i_path = out.join(I2I_INCIDENCE);
    let i2i = i2i_incidence(&corpus.features, res.model.knn_k)?;
    write_csr(&i2i_path, &i2i).map_err(data_at(&i2i_path))?;

    let mut files = BTreeMap::new();
    for name in [
        TRAIN_PAIRS,
        VALID_PAIRS,
        TEST_PAIRS,
        USER_IDS,
        ITEM_IDS,
        U2U_INCIDENCE,
        I2I_INCIDENCE,
    ] {
        files.insert(name.to_string(), sha256_hex(&read_bytes(&out.join(name))?));
    }
    let manifest = Manifest {
        num_users: split.num_users,
        num_items: split.num_items,
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        split_mode: res.run.split_mode,
        split_seed: res.run.split_seed,
        knn_k: res.model.knn_k,
        data_digest: corpus.data_digest,
        files,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    info!(
        "prepared {} users, {} items, {}/{}/{} interactions in {}",
        manifest.num_users,
        manifest.num_items,
        manifest.train,
        manifest.validation,
        manifest.test,
        out.display()
    );
    Ok(manifest)
}

/// Artifacts of `prepare`, checked against the manifest.
pub struct Prepared {
    pub manifest: Manifest,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub i2i_incidence: SparseCsr,
}

fn verified(dir: &Path, manifest: &Manifest, name: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| CliError::Data(format!("manifest does not list {name}")))?;
    if &sha256_hex(&read_bytes(&path)?) != expected {
        return Err(CliError::Data(format!(
            "{} changed since prepare; re-run prepare",
            path.display()
        )));
    }
    Ok(path)
}

pub fn load_prepared(res: &Resolved) -> CliResult<Prepared> {
    let dir = &res.run.output_dir;
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(CliError::Data(format!(
            "{} not found; run prepare first",
            mpath.display()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&read_bytes(&mpath)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", mpath.display())))?;
    if manifest.knn_k != res.model.knn_k
        || manifest.split_mode != res.run.split_mode
        || manifest.split_seed != res.run.split_seed
    {
        return Err(CliError::Config(format!(
            "{} was prepared with knn_k={}, split {:?}/{}; the config asks for knn_k={}, split {:?}/{}; re-run prepare",
            dir.display(),
            manifest.knn_k,
            manifest.split_mode,
            manifest.split_seed,
            res.model.knn_k,
            res.run.split_mode,
            res.run.split_seed
        )));
    }
    let pairs = |name: &str| -> CliResult<Vec<(usize, usize)>> {
        let path = verified(dir, &manifest, name)?;
        read_pairs(&path).map_err(data_at(&path))
    };
    let train = pairs(TRAIN_PAIRS)?;
    let validation = pairs(VALID_PAIRS)?;
    let test = pairs(TEST_PAIRS)?;
    let i2i_path = verified(dir, &manifest, I2I_INCIDENCE)?;
    let i2i_incidence = read_csr(&i2i_path).map_err(data_at(&i2i_path))?;
    if i2i_incidence.rows() != manifest.num_items {
        return Err(CliError::Data(format!(
            "{} has {} rows for {} items",
            i2i_path.display(),
            i2i_incidence.rows(),
            manifest.num_items
        )));
    }
    Ok(Prepared {
        manifest,
        train,
        validation,
        test,
        i2i_incidence,
    })
}

/// Training matrix and graphs for one run, after the optional cold-start cut.
pub struct Experiment {
    pub train: SparseCsr,
    pub cold: Option<ColdStartSplit>,
    pub graphs: GraphSet,
}

pub fn cold_split(
    train: &[(usize, usize)],
    num_items: usize,
    ratio: f64,
    seed: u64,
) -> CliResult<ColdStartSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ COLD_STREAM);
    Ok(make_cold_start_split(train, num_items, ratio, &mut rng)?)
}

pub fn experiment(res: &Resolved, prepared: &Prepared) -> CliResult<Experiment> {
    let m = &prepared.manifest;
    let cold = res
        .cold_start
        .map(|r| cold_split(&prepared.train, m.num_items, r, res.model.seed))
        .transpose()?;
    let pairs = cold.as_ref().map_or(&prepared.train, |c| &c.train);
    let train = SparseCsr::from_pairs(m.num_users, m.num_items, pairs)?;
    let i2i = PropagationOperator::new(prepared.i2i_incidence.clone(), res.model.hgnn_style)?;
    let graphs = GraphSet::from_parts(&train, i2i, res.model.hgnn_style)?;
    Ok(Experiment {
        train,
        cold,
        graphs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub config_digest: String,
    pub config: ModelConfig,
    pub report: TrainReport,
}

/// Trains on the prepared split and writes the best checkpoint and report.
pub fn train(res: &Resolved) -> CliResult<TrainOutput> {
    let prepared = load_prepared(res)?;
    let digest = config_digest(res, &prepared.manifest.data_digest);
    let exp = experiment(res, &prepared)?;
    let (params, report) = train_model(
        &exp.graphs,
        &exp.train,
        &prepared.validation,
        &res.model,
        VALIDATION_K,
    )?;
    let out = &res.run.output_dir;
    let ckpt = out.join(CHECKPOINT);
    save_checkpoint(&ckpt, &params, &res.model, &digest).map_err(data_at(&ckpt))?;
    let output = TrainOutput {
        config_digest: digest,
        config: res.model.clone(),
        report,
    };
    write_json(&out.join(TRAIN_REPORT), &output)?;
    info!(
        "best epoch {} of {}, checkpoint {}",
        output.report.best_epoch,
        output.report.epochs.len(),
        ckpt.display()
    );
    Ok(output)
}

/// Evaluates a checkpoint on the test split at cutoff `k`.
pub fn evaluate(res: &Resolved, k: usize, checkpoint: Option<&Path>) -> CliResult<MetricsReport> {
    if k == 0 {
        return Err(CliError::Config("--k must be >= 1".into()));
    }
    let prepared = load_prepared(res)?;
    let digest = config_digest(res, &prepared.manifest.data_digest);
    let ckpt_path =
        checkpoint.map_or_else(|| res.run.output_dir.join(CHECKPOINT), Path::to_path_buf);
    let ckpt = load_checkpoint(&ckpt_path).map_err(data_at(&ckpt_path))?;
    if ckpt.digest != digest {
        return Err(CliError::Config(format!(
            "{} was trained under config digest {} but this run resolves to {}; \
             use the same config, --seed, --ablate and --cold-start as for train",
            ckpt_path.display(),
            ckpt.digest,
            digest
        )));
    }
    let exp = experiment(res, &prepared)?;
    let out = forward(&ckpt.params, &exp.graphs, &res.model)?;
    let (fu, fi) = out.fused();
    let overall = evaluate_embeddings(fu, fi, &exp.train, &prepared.test, k)?;
    let cold = exp
        .cold
        .as_ref()
        .map(|c| evaluate_cold(fu, fi, c, k))
        .transpose()?;
    let report = MetricsReport {
        k: k.min(prepared.manifest.num_items),
        users_evaluated: overall.users,
        recall: overall.recall,
        precision: overall.precision,
        ndcg: overall.ndcg,
        cold_recall: cold.map(|c| c.recall),
        cold_ndcg: cold.map(|c| c.ndcg),
        config_digest: digest,
    };
    write_json(&res.run.output_dir.join(METRICS), &report)?;
    Ok(report)
}

/// One sweep cell: the grid values and either metrics or the failure.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub values: Vec<Value>,
    pub outcome: Result<MetricMeans, String>,
}

/// All combinations of the grid, keys in sorted order.
pub fn grid_cells(grid: &BTreeMap<String, Vec<Value>>) -> Vec<Vec<Value>> {
    grid.values().fold(vec![Vec::new()], |acc, vals| {
        acc.iter()
            .flat_map(|prefix| {
                vals.iter().map(move |v| {
                    let mut row = prefix.clone();
                    row.push(v.clone());
                    row
                })
            })
            .collect()
    })
}

fn run_cell(
    res: &Resolved,
    keys: &[&String],
    values: &[Value],
    corpus: &Corpus,
    split: &DataSplit,
    k: usize,
) -> CliResult<MetricMeans> {
    let overrides: serde_json::Map<String, Value> = keys
        .iter()
        .map(|k| (*k).clone())
        .zip(values.iter().cloned())
        .collect();
    let model = apply_model_overrides(&res.model, &overrides)?;
    let train = split.train_matrix()?;
    let graphs = GraphSet::build(&train, &corpus.features, model.knn_k, model.hgnn_style)?;
    let (params, _) = train_model(&graphs, &train, &split.validation, &model, VALIDATION_K)?;
    let out = forward(&params, &graphs, &model)?;
    let (fu, fi) = out.fused();
    Ok(evaluate_embeddings(fu, fi, &train, &split.test, k)?)
}

fn csv_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Trains and evaluates every grid cell; failures are recorded, not fatal.
pub fn sweep(res: &Resolved, k: usize) -> CliResult<Vec<SweepRow>> {
    let grid = &res.run.sweep;
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(CliError::Config("sweep grid must be nonempty".into()));
    }
    if k == 0 {
        return Err(CliError::Config("--k must be >= 1".into()));
    }
    let corpus = load_corpus(&res.run.data)?;
    let split = split_corpus(res, &corpus)?;
    let keys: Vec<&String> = grid.keys().collect();
    let rows: Vec<SweepRow> = grid_cells(grid)
        .into_par_iter()
        .map(|values| {
            let outcome =
                run_cell(res, &keys, &values, &corpus, &split, k).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                warn!("sweep cell {values:?} failed: {e}");
            }
            SweepRow { values, outcome }
        })
        .collect();

    let mut csv = keys
        .iter()
        .map(|k| k.as_str())
        .collect::<Vec<_>>()
        .join(",");
    csv.push_str(&format!(",recall@{k},precision@{k},ndcg@{k},status\n"));
    for row in &rows {
        let mut fields: Vec<String> = row.values.iter().map(csv_value).collect();
        match &row.outcome {
            Ok(m) => {
                fields.extend([m.recall, m.precision, m.ndcg].map(|x| format!("{x:.6}")));
                fields.push("ok".into());
            }
            Err(msg) => {
                fields.extend(std::iter::repeat_n("error".to_string(), 3));
                fields.push(format!("\"{}\"", msg.replace('"', "'")));
            }
        }
        csv.push_str(&fields.join(","));
        csv.push('\n');
    }
    let out = &res.run.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    write_bytes(&out.join(SWEEP_TABLE), csv.as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_is_cartesian() {
        let mut g = BTreeMap::new();
        g.insert("u2u_layers".to_string(), vec![json!(1), json!(2), json!(3)]);
        g.insert("i2i_layers".to_string(), vec![json!(1), json!(2), json!(3)]);
        let cells = grid_cells(&g);
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[0], vec![json!(1), json!(1)]);
        assert_eq!(cells[8], vec![json!(3), json!(3)]);
        let mut t = BTreeMap::new();
        t.insert(
            "tau".to_string(),
            (1..=10).map(|k| json!(k as f64 / 10.0)).collect(),
        );
        assert_eq!(grid_cells(&t).len(), 10);
    }
}
