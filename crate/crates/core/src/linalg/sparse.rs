use rayon::prelude::*;

use super::dense::{row_l2_normalize, DenseMatrix};
use crate::error::{Error, Result};

/// Output rows times width above which kernels fan out over rayon.
const PAR_THRESHOLD: usize = 1 << 14;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within a row and stored values are
/// never zero, so two matrices with the same entries are structurally equal.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCsr {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCsr {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(Error::InvalidSparse(format!(
                "row pointer length {} for {rows} rows",
                row_ptr.len()
            )));
        }
        if row_ptr[0] != 0 || row_ptr[rows] != col_idx.len() {
            return Err(Error::InvalidSparse(
                "row pointers must start at 0 and end at nnz".into(),
            ));
        }
        if col_idx.len() != values.len() {
            return Err(Error::InvalidSparse(format!(
                "{} column indices but {} values",
                col_idx.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let (lo, hi) = (row_ptr[r], row_ptr[r + 1]);
            if lo > hi {
                return Err(Error::InvalidSparse(format!(
                    "row pointers decrease at row {r}"
                )));
            }
            let cols_r = &col_idx[lo..hi];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSparse(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
            if let Some(&c) = cols_r.last() {
                if c >= cols {
                    return Err(Error::InvalidSparse(format!(
                        "column {c} out of range in row {r} ({cols} columns)"
                    )));
                }
            }
        }
        if let Some(p) = values.iter().position(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::InvalidSparse(format!(
                "stored value {} at position {p} must be finite and nonzero",
                values[p]
            )));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// resulting zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::InvalidSparse(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((c, v), r) in col_idx.into_iter().zip(values).zip(row_of) {
            if v != 0.0 {
                keep_cols.push(c);
                keep_vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, keep_cols, keep_vals)
    }

    /// Binary matrix with a one at every listed `(row, col)`; repeats collapse.
    pub fn from_pairs(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let triplets: Vec<_> = sorted.into_iter().map(|(r, c)| (r, c, 1.0)).collect();
        Self::from_triplets(rows, cols, &triplets)
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in m.row_iter() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.values) {
            out[c] += v;
        }
        out
    }

    /// `self · x` for a dense vector.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "mul_vec",
                format!(
                    "{}x{} times vector of length {}",
                    self.rows,
                    self.cols,
                    x.len()
                ),
            ));
        }
        Ok((0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect())
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in ascending order, so each output row stays sorted
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = next[c];
                col_idx[dst] = r;
                values[dst] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Horizontal concatenation `[S_1 | S_2 | ...]`.
    pub fn hstack(parts: &[&SparseCsr]) -> Result<Self> {
        let rows = match parts.first() {
            Some(p) => p.rows,
            None => return Err(Error::Empty("hstack of zero matrices".into())),
        };
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::shape(
                "hstack",
                format!("row counts {rows} and {}", p.rows),
            ));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let nnz = parts.iter().map(|p| p.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let (cs, vs) = p.row(r);
                col_idx.extend(cs.iter().map(|c| c + offset));
                values.extend_from_slice(vs);
                offset += p.cols;
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }
}

/// Sparse times dense. Each output row sums its terms in ascending column order.
pub fn spmm(s: &SparseCsr, x: &DenseMatrix) -> Result<DenseMatrix> {
    if s.cols != x.rows() {
        return Err(Error::shape(
            "spmm",
            format!("{}x{} times {}x{}", s.rows, s.cols, x.rows(), x.cols()),
        ));
    }
    let d = x.cols();
    let mut out = DenseMatrix::zeros(s.rows, d);
    if d == 0 {
        return Ok(out);
    }
    let kernel = |(r, out_row): (usize, &mut [f64])| {
        let (cols, vals) = s.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, xv) in out_row.iter_mut().zip(x.row(c)) {
                *o += v * xv;
            }
        }
    };
    if s.rows * d >= PAR_THRESHOLD {
        out.data_mut()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(kernel);
    } else {
        out.data_mut().chunks_mut(d).enumerate().for_each(kernel);
    }
    Ok(out)
}

/// Binary K-nearest-neighbour graph under cosine similarity.
///
/// Every row keeps itself plus its `K - 1` most similar other rows, ties going
/// to the lower index. A zero feature row keeps only its self-loop.
pub fn cosine_topk(features: &DenseMatrix, k: usize) -> Result<SparseCsr> {
    if k == 0 {
        return Err(Error::Parameter(
            "top-K neighbour count must be >= 1".into(),
        ));
    }
    let n = features.rows();
    let unit = row_l2_normalize(features);
    let nonzero: Vec<bool> = features
        .row_iter()
        .map(|r| r.iter().any(|v| *v != 0.0))
        .collect();
    let keep = k.min(n);

    let neighbours: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !nonzero[i] {
                return vec![i];
            }
            let anchor = unit.row(i);
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = anchor.iter().zip(unit.row(j)).map(|(a, b)| a * b).sum();
                    (s, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| {
                (b.0 + 0.0).total_cmp(&(a.0 + 0.0)).then(a.1.cmp(&b.1))
            };
            let others = keep - 1;
            if others < sims.len() && others > 0 {
                sims.select_nth_unstable_by(others - 1, cmp);
            }
            sims.truncate(others);
            let mut row: Vec<usize> = sims.into_iter().map(|(_, j)| j).collect();
            row.push(i);
            row.sort_unstable();
            row
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(n * keep);
    for row in neighbours {
        col_idx.extend(row);
        row_ptr.push(col_idx.len());
    }
    let values = vec![1.0; col_idx.len()];
    SparseCsr::new(n, n, row_ptr, col_idx, values)
}
