//! Mini-batch training: triple sampling, Adam, early stopping.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::evaluator::evaluate_split;
use crate::graph::GraphSet;
use crate::linalg::{DenseMatrix, SparseCsr};
use crate::model::{forward, ModelParams};
use crate::objective::{record_objective, LossBreakdown, TripleBatch};

/// Draws `batch_size` triples: a training interaction uniformly at random,
/// then a negative item uniformly among the items that user has not touched.
pub fn sample_triples<R: Rng + ?Sized>(
    train: &SparseCsr,
    batch_size: usize,
    rng: &mut R,
) -> Result<TripleBatch> {
    let nnz = train.nnz();
    if nnz == 0 {
        return Err(Error::Empty("no training interactions to sample".into()));
    }
    let n = train.cols();
    let row_ptr = train.row_ptr();
    let cols = train.col_indices();
    let mut batch = TripleBatch::default();
    for _ in 0..batch_size {
        let k = rng.random_range(0..nnz);
        let u = row_ptr.partition_point(|&p| p <= k) - 1;
        if train.row_nnz(u) >= n {
            return Err(Error::Degenerate(format!(
                "user {u} interacted with every item; no negative exists"
            )));
        }
        let neg = loop {
            let j = rng.random_range(0..n);
            if !train.contains(u, j) {
                break j;
            }
        };
        batch.push(u, cols[k], neg);
    }
    Ok(batch)
}

/// Adam with bias correction over the four parameter tables.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .tables()
            .iter()
            .map(|(_, t)| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Gradients are checked before anything is written, so a
    /// non-finite gradient leaves the parameters untouched.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[DenseMatrix; 4],
        lr: f64,
    ) -> Result<()> {
        for ((name, table), g) in params.tables().iter().zip(grads) {
            if g.shape() != table.shape() {
                return Err(Error::shape(
                    "adam",
                    format!(
                        "gradient {:?} for table `{name}` {:?}",
                        g.shape(),
                        table.shape()
                    ),
                ));
            }
            if g.first_non_finite().is_some() {
                return Err(Error::NonFiniteGradient {
                    table: (*name).to_string(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, (_, table)) in params.tables_mut().into_iter().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (idx, w) in table.data_mut().iter_mut().enumerate() {
                m[idx] = b1 * m[idx] + (1.0 - b1) * g[idx];
                v[idx] = b2 * v[idx] + (1.0 - b2) * g[idx] * g[idx];
                let m_hat = m[idx] / c1;
                let v_hat = v[idx] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Forward, loss, backward and one Adam update for a single batch.
pub fn train_step(
    params: &mut ModelParams,
    graphs: &GraphSet,
    config: &ModelConfig,
    batch: &TripleBatch,
    adam: &mut AdamState,
) -> Result<LossBreakdown> {
    let mut out = forward(params, graphs, config)?;
    let (loss, breakdown) = record_objective(&mut out, batch, config)?;
    let mut grads = out.tape.backward(loss)?;
    let leaves = out.leaves.all();
    let grads: [DenseMatrix; 4] = std::array::from_fn(|k| {
        grads
            .take(leaves[k])
            .expect("backward yields a gradient for every leaf")
    });
    adam.step(params, &grads, config.learning_rate)?;
    Ok(breakdown)
}

/// Number of mini-batches in one epoch.
pub fn steps_per_epoch(nnz: usize, batch_size: usize) -> usize {
    nnz.div_ceil(batch_size)
}

/// One pass of `ceil(nnz / batch_size)` steps; returns the summed losses.
pub fn train_epoch<R: Rng + ?Sized>(
    params: &mut ModelParams,
    graphs: &GraphSet,
    train: &SparseCsr,
    config: &ModelConfig,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown::default();
    for _ in 0..steps_per_epoch(train.nnz(), config.batch_size) {
        let batch = sample_triples(train, config.batch_size, rng)?;
        total.accumulate(&train_step(params, graphs, config, &batch, adam)?);
    }
    Ok(total)
}

/// Patience counter on a metric where larger is better. Ties do not count
/// as improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records `value` for `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        match self.best {
            Some(b) if value <= b => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some(value);
                self.best_epoch = epoch;
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_recall: Option<f64>,
    pub val_ndcg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_recall: Option<f64>,
    pub stop_reason: StopReason,
}

/// Trains with a caller-supplied validation monitor returning
/// `(recall, ndcg)`, or `None` to skip validation. Returns the parameters of
/// the best monitored epoch (the last epoch when nothing is monitored).
pub fn fit_with_monitor<F>(
    mut params: ModelParams,
    graphs: &GraphSet,
    train: &SparseCsr,
    config: &ModelConfig,
    mut monitor: F,
) -> Result<(ModelParams, TrainReport)>
where
    F: FnMut(usize, &ModelParams) -> Result<Option<(f64, f64)>>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5A4D_504C_4552_0001);
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params: Option<ModelParams> = None;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let losses = train_epoch(&mut params, graphs, train, config, &mut adam, &mut rng)?;
        let val = monitor(epoch, &params)?;
        info!(
            "epoch {epoch}: loss {:.6} (bpr {:.6}, scl_u {:.6}, scl_i {:.6}, reg {:.6}){}",
            losses.total,
            losses.bpr,
            losses.scl_user,
            losses.scl_item,
            losses.reg,
            val.map(|(r, n)| format!(", val recall {r:.5}, ndcg {n:.5}"))
                .unwrap_or_default()
        );
        epochs.push(EpochRecord {
            epoch,
            losses,
            val_recall: val.map(|v| v.0),
            val_ndcg: val.map(|v| v.1),
        });
        if let Some((recall, _)) = val {
            if stopper.observe(epoch, recall) {
                best_params = Some(params.clone());
            } else if stopper.should_stop() {
                debug!("no improvement for {} epochs", config.patience);
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    let last = epochs.len();
    let (params, best_epoch) = match best_params {
        Some(p) => (p, stopper.best_epoch()),
        None => (params, last),
    };
    Ok((
        params,
        TrainReport {
            epochs,
            best_epoch,
            best_val_recall: stopper.best(),
            stop_reason,
        },
    ))
}

/// Trains with early stopping on validation Recall@`k`.
pub fn fit(
    params: ModelParams,
    graphs: &GraphSet,
    train: &SparseCsr,
    validation: &[(usize, usize)],
    config: &ModelConfig,
    k: usize,
) -> Result<(ModelParams, TrainReport)> {
    fit_with_monitor(params, graphs, train, config, |_, p| {
        if validation.is_empty() {
            return Ok(None);
        }
        let r = evaluate_split(p, graphs, config, train, validation, k)?;
        Ok(Some((r.recall, r.ndcg)))
    })
}

/// Convenience: fresh parameters from `config.seed`, then [`fit`].
pub fn train_model(
    graphs: &GraphSet,
    train: &SparseCsr,
    validation: &[(usize, usize)],
    config: &ModelConfig,
    k: usize,
) -> Result<(ModelParams, TrainReport)> {
    let params = ModelParams::init(
        graphs.num_users(),
        graphs.num_items(),
        config.embedding_dim,
        config.seed,
    );
    fit(params, graphs, train, validation, config, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_ties_are_not_improvements() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(1, 0.5));
        assert!(!s.observe(2, 0.5));
        assert!(!s.should_stop());
        assert!(!s.observe(3, 0.4));
        assert!(s.should_stop());
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn sampler_respects_training_matrix() {
        let train = SparseCsr::from_pairs(3, 5, &[(0, 0), (0, 1), (1, 4), (2, 2), (2, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_triples(&train, 500, &mut rng).unwrap();
        for (u, i, j) in b.triples() {
            assert!(train.contains(u, i));
            assert!(!train.contains(u, j));
        }
    }

    #[test]
    fn sampler_rejects_saturated_user() {
        let train = SparseCsr::from_pairs(1, 2, &[(0, 0), (0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_triples(&train, 4, &mut rng),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ModelParams::init(2, 2, 3, 1);
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let grads: [DenseMatrix; 4] = std::array::from_fn(|_| DenseMatrix::filled(2, 3, 0.5));
        adam.step(&mut p, &grads, 0.01).unwrap();
        for ((_, a), (_, b)) in p.tables().iter().zip(before.tables().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - x - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_rejects_nan_and_leaves_params() {
        let mut p = ModelParams::init(2, 2, 3, 1);
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let mut grads: [DenseMatrix; 4] = std::array::from_fn(|_| DenseMatrix::zeros(2, 3));
        grads[2].set(1, 1, f64::NAN);
        match adam.step(&mut p, &grads, 0.01) {
            Err(Error::NonFiniteGradient { table }) => assert_eq!(table, "user_hypergraph"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn steps_round_up() {
        assert_eq!(steps_per_epoch(1000, 128), 8);
        assert_eq!(steps_per_epoch(1024, 128), 8);
        assert_eq!(steps_per_epoch(1, 1024), 1);
    }
}
