#![allow(dead_code)]

use mmhcl::linalg::{DenseMatrix, SparseCsr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_binary(rng: &mut impl Rng, rows: usize, cols: usize, p: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn to_csr(dense: &[Vec<f64>]) -> SparseCsr {
    let rows = dense.len();
    let cols = dense.first().map_or(0, Vec::len);
    let trip: Vec<(usize, usize, f64)> = dense
        .iter()
        .enumerate()
        .flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(c, &v)| (r, c, v))
        })
        .collect();
    SparseCsr::from_triplets(rows, cols, &trip).unwrap()
}

pub fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols)
        .map(|c| a.iter().map(|r| r[c]).collect())
        .collect()
}

/// `D^{-1/2} X D^{-1/2}` with `D` the row sums of `X`; zero degree gives zero.
pub fn laplacian_normalize(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s: Vec<f64> = x
        .iter()
        .map(|r| {
            let d: f64 = r.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    x.iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, v)| s[i] * v * s[j]).collect())
        .collect()
}

pub fn max_diff(a: &DenseMatrix, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    assert_eq!(a.rows(), b.len());
    for (r, row) in b.iter().enumerate() {
        assert_eq!(a.cols(), row.len());
        for (c, v) in row.iter().enumerate() {
            m = m.max((a.get(r, c) - v).abs());
        }
    }
    m
}

/// Full-sort cosine KNN: self first, then by similarity, ties to lower index.
pub fn brute_knn(features: &DenseMatrix, k: usize) -> Vec<Vec<f64>> {
    let n = features.rows();
    let norm: Vec<f64> = features
        .row_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        if norm[i] == 0.0 {
            out[i][i] = 1.0;
            continue;
        }
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dot: f64 = features
                    .row(i)
                    .iter()
                    .zip(features.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let cos = if norm[j] == 0.0 {
                    0.0
                } else {
                    dot / (norm[i] * norm[j])
                };
                (cos, j)
            })
            .collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        out[i][i] = 1.0;
        for &(_, j) in order.iter().take(k.min(n) - 1) {
            out[i][j] = 1.0;
        }
    }
    out
}
