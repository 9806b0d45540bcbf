//! Full-ranking top-K evaluation: Recall, Precision and NDCG, a popularity
//! baseline, and the cold-start item protocol.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::group_by_user;
use crate::error::{Error, Result};
use crate::graph::GraphSet;
use crate::linalg::{DenseMatrix, SparseCsr};
use crate::model::{forward, ModelParams};

/// Averaged ranking metrics for one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub users_evaluated: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cold_recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cold_ndcg: Option<f64>,
    pub config_digest: String,
}

/// Mean metrics over the users that had at least one test item.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricMeans {
    pub users: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
}

fn by_score_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    // adding 0.0 folds -0.0 into 0.0 so signed zeros tie
    (b.0 + 0.0).total_cmp(&(a.0 + 0.0)).then(a.1.cmp(&b.1))
}

/// Best `k` candidates by score, ties to the lower index. `excluded` must be sorted.
fn top_k(scores: &[f64], excluded: &[usize], candidates: Option<&[usize]>, k: usize) -> Vec<usize> {
    let mut pool: Vec<(f64, usize)> = match candidates {
        Some(c) => c
            .iter()
            .filter(|i| excluded.binary_search(i).is_err())
            .map(|&i| (scores[i], i))
            .collect(),
        None => scores
            .iter()
            .enumerate()
            .filter(|(i, _)| excluded.binary_search(i).is_err())
            .map(|(i, &s)| (s, i))
            .collect(),
    };
    if k < pool.len() {
        pool.select_nth_unstable_by(k, by_score_then_index);
        pool.truncate(k);
    }
    pool.sort_unstable_by(by_score_then_index);
    pool.into_iter().map(|(_, i)| i).collect()
}

fn user_scores(fused_u: &DenseMatrix, fused_i: &DenseMatrix, u: usize) -> Vec<f64> {
    let eu = fused_u.row(u);
    fused_i
        .row_iter()
        .map(|ei| eu.iter().zip(ei).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_embeddings(fused_u: &DenseMatrix, fused_i: &DenseMatrix, mask: &SparseCsr) -> Result<()> {
    if fused_u.cols() != fused_i.cols()
        || mask.rows() != fused_u.rows()
        || mask.cols() != fused_i.rows()
    {
        return Err(Error::shape(
            "rank_all",
            format!(
                "users {:?}, items {:?}, mask {}x{}",
                fused_u.shape(),
                fused_i.shape(),
                mask.rows(),
                mask.cols()
            ),
        ));
    }
    Ok(())
}

/// Top-K items per user by inner-product score. Items in the user's row of
/// `train_mask` are never returned; `k` is clamped to the item count.
pub fn rank_all(
    fused_u: &DenseMatrix,
    fused_i: &DenseMatrix,
    train_mask: &SparseCsr,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    check_embeddings(fused_u, fused_i, train_mask)?;
    let k = k.min(fused_i.rows());
    Ok((0..fused_u.rows())
        .into_par_iter()
        .map(|u| {
            top_k(
                &user_scores(fused_u, fused_i, u),
                train_mask.row(u).0,
                None,
                k,
            )
        })
        .collect())
}

/// Same protocol with one user-independent score per item.
pub fn rank_by_item_scores(
    scores: &[f64],
    train_mask: &SparseCsr,
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    if scores.len() != train_mask.cols() {
        return Err(Error::shape(
            "rank_by_item_scores",
            format!("{} scores for {} items", scores.len(), train_mask.cols()),
        ));
    }
    let k = k.min(scores.len());
    Ok((0..train_mask.rows())
        .map(|u| top_k(scores, train_mask.row(u).0, None, k))
        .collect())
}

/// Top-K restricted to `candidates` (sorted), with no training mask.
pub fn rank_among(
    fused_u: &DenseMatrix,
    fused_i: &DenseMatrix,
    candidates: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= fused_i.rows()) {
        return Err(Error::shape(
            "rank_among",
            format!("candidate {bad} out of range"),
        ));
    }
    let k = k.min(candidates.len().max(1));
    Ok((0..fused_u.rows())
        .into_par_iter()
        .map(|u| top_k(&user_scores(fused_u, fused_i, u), &[], Some(candidates), k))
        .collect())
}

fn hits(topk: &[usize], test: &[usize]) -> usize {
    topk.iter().filter(|i| test.contains(i)).count()
}

pub fn recall_at_k(topk: &[usize], test: &[usize], k: usize) -> f64 {
    let n = topk.len().min(k);
    hits(&topk[..n], test) as f64 / test.len() as f64
}

pub fn precision_at_k(topk: &[usize], test: &[usize], k: usize) -> f64 {
    let n = topk.len().min(k);
    hits(&topk[..n], test) as f64 / k as f64
}

/// Binary-relevance NDCG with `1 / log2(rank + 1)` discounts.
pub fn ndcg_at_k(topk: &[usize], test: &[usize], k: usize) -> f64 {
    let n = topk.len().min(k);
    let dcg: f64 = topk[..n]
        .iter()
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..test.len().min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Averages the three metrics over users with a nonempty test list.
pub fn average_metrics(
    rankings: &[Vec<usize>],
    test_by_user: &[Vec<usize>],
    k: usize,
) -> MetricMeans {
    let mut m = MetricMeans::default();
    for (topk, test) in rankings.iter().zip(test_by_user) {
        if test.is_empty() {
            continue;
        }
        m.users += 1;
        m.recall += recall_at_k(topk, test, k);
        m.precision += precision_at_k(topk, test, k);
        m.ndcg += ndcg_at_k(topk, test, k);
    }
    if m.users > 0 {
        let n = m.users as f64;
        m.recall /= n;
        m.precision /= n;
        m.ndcg /= n;
    }
    m
}

/// Full-ranking metrics of fixed embeddings against held-out pairs.
pub fn evaluate_embeddings(
    fused_u: &DenseMatrix,
    fused_i: &DenseMatrix,
    train_mask: &SparseCsr,
    test: &[(usize, usize)],
    k: usize,
) -> Result<MetricMeans> {
    let k = k.min(fused_i.rows());
    let rankings = rank_all(fused_u, fused_i, train_mask, k)?;
    Ok(average_metrics(
        &rankings,
        &group_by_user(test, fused_u.rows()),
        k,
    ))
}

/// Runs one forward pass and evaluates the fused embeddings.
pub fn evaluate_split(
    params: &ModelParams,
    graphs: &GraphSet,
    config: &ModelConfig,
    train_mask: &SparseCsr,
    test: &[(usize, usize)],
    k: usize,
) -> Result<MetricsReport> {
    let out = forward(params, graphs, config)?;
    let (fu, fi) = out.fused();
    let m = evaluate_embeddings(fu, fi, train_mask, test, k)?;
    Ok(MetricsReport {
        k: k.min(fi.rows()),
        users_evaluated: m.users,
        recall: m.recall,
        precision: m.precision,
        ndcg: m.ndcg,
        cold_recall: None,
        cold_ndcg: None,
        config_digest: String::new(),
    })
}

/// Item scores of the popularity baseline: training interaction counts.
pub fn popularity_scores(train: &SparseCsr) -> Vec<f64> {
    train.col_sums()
}

pub fn evaluate_popularity(
    train_mask: &SparseCsr,
    test: &[(usize, usize)],
    k: usize,
) -> Result<MetricMeans> {
    let k = k.min(train_mask.cols());
    let rankings = rank_by_item_scores(&popularity_scores(train_mask), train_mask, k)?;
    Ok(average_metrics(
        &rankings,
        &group_by_user(test, train_mask.rows()),
        k,
    ))
}

/// Training pairs with a share of items made cold.
#[derive(Clone, Debug, PartialEq)]
pub struct ColdStartSplit {
    /// Training pairs with every cold item's interactions removed.
    pub train: Vec<(usize, usize)>,
    /// Cold item ids, ascending.
    pub cold_items: Vec<usize>,
    /// The removed interactions; they form the cold test set.
    pub cold_test: Vec<(usize, usize)>,
}

/// Samples `floor(ratio · num_items)` items uniformly and strips all their
/// training interactions.
pub fn make_cold_start_split<R: Rng + ?Sized>(
    train: &[(usize, usize)],
    num_items: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<ColdStartSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Parameter(format!(
            "cold-start ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_cold = (ratio * num_items as f64).floor() as usize;
    let mut cold_items = rand::seq::index::sample(rng, num_items, n_cold).into_vec();
    cold_items.sort_unstable();
    let mut is_cold = vec![false; num_items];
    for &i in &cold_items {
        is_cold[i] = true;
    }
    let (cold_test, kept): (Vec<_>, Vec<_>) = train.iter().partition(|&&(_, i)| is_cold[i]);
    Ok(ColdStartSplit {
        train: kept,
        cold_items,
        cold_test,
    })
}

/// Metrics for cold items only: each user ranks the cold items, judged
/// against that user's cold interactions.
pub fn evaluate_cold(
    fused_u: &DenseMatrix,
    fused_i: &DenseMatrix,
    cold: &ColdStartSplit,
    k: usize,
) -> Result<MetricMeans> {
    if cold.cold_items.is_empty() {
        return Err(Error::Empty("no cold items to evaluate".into()));
    }
    let rankings = rank_among(fused_u, fused_i, &cold.cold_items, k)?;
    Ok(average_metrics(
        &rankings,
        &group_by_user(&cold.cold_test, fused_u.rows()),
        k,
    ))
}
