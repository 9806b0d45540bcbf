//! Interaction and feature ingestion, train/validation/test splitting, and a
//! planted-community synthetic corpus.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ModalityBundle, ModalityTag};
use crate::linalg::{DenseMatrix, SparseCsr};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMHF";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Deduplicated user-item interactions over contiguous 0-based ids.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    pub num_users: usize,
    pub num_items: usize,
    pub pairs: Vec<(usize, usize)>,
    /// Raw id of each dense user index, in first-appearance order.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Number of duplicate lines dropped while loading.
    pub duplicates: usize,
}

impl InteractionLog {
    /// Log over already-dense ids; raw ids are the decimal indices.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if num_users == 0 || num_items == 0 {
            return Err(Error::Empty("interaction log needs users and items".into()));
        }
        if let Some(&(u, i)) = pairs
            .iter()
            .find(|&&(u, i)| u >= num_users || i >= num_items)
        {
            return Err(Error::Data(format!(
                "pair ({u}, {i}) outside {num_users} users x {num_items} items"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(pairs.len());
        let mut kept = Vec::with_capacity(pairs.len());
        let mut duplicates = 0;
        for p in pairs {
            if seen.insert(p) {
                kept.push(p);
            } else {
                duplicates += 1;
            }
        }
        Ok(Self {
            num_users,
            num_items,
            pairs: kept,
            user_ids: (0..num_users).map(|u| u.to_string()).collect(),
            item_ids: (0..num_items).map(|i| i.to_string()).collect(),
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_csr(&self) -> Result<SparseCsr> {
        SparseCsr::from_pairs(self.num_users, self.num_items, &self.pairs)
    }
}

/// Parses `raw_user<TAB>raw_item[<TAB>...]` lines. Blank lines are skipped,
/// extra columns ignored, duplicate pairs dropped and counted.
pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let reader = BufReader::new(File::open(path)?);
    let mut user_map: HashMap<String, usize> = HashMap::new();
    let mut item_map: HashMap<String, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    let mut duplicates = 0;

    for (lineno, line) in reader.split(b'\n').enumerate() {
        let lineno = lineno + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let bytes = line?;
        let text = String::from_utf8(bytes).map_err(|_| parse_err("invalid UTF-8".into()))?;
        let text = text.strip_suffix('\r').unwrap_or(&text);
        if text.trim().is_empty() {
            continue;
        }
        let mut fields = text.split('\t');
        let user = fields.next().unwrap_or_default();
        let item = fields
            .next()
            .ok_or_else(|| parse_err("expected `user<TAB>item`".into()))?;
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let u = *user_map.entry(user.to_owned()).or_insert_with(|| {
            user_ids.push(user.to_owned());
            user_ids.len() - 1
        });
        let i = *item_map.entry(item.to_owned()).or_insert_with(|| {
            item_ids.push(item.to_owned());
            item_ids.len() - 1
        });
        if seen.insert((u, i)) {
            pairs.push((u, i));
        } else {
            duplicates += 1;
        }
    }
    if pairs.is_empty() {
        return Err(Error::Empty(format!(
            "{} has no interactions",
            path.display()
        )));
    }
    if duplicates > 0 {
        log::warn!(
            "{}: dropped {duplicates} duplicate interactions",
            path.display()
        );
    }
    Ok(InteractionLog {
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        pairs,
        user_ids,
        item_ids,
        duplicates,
    })
}

/// Writes dense-id pairs as `user<TAB>item` lines.
pub fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (u, i) in pairs {
        writeln!(w, "{u}\t{i}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads pairs written by [`write_pairs`]; ids must already be dense integers.
pub fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: format!("expected two integer ids, got `{line}`"),
        };
        let mut f = line.split('\t');
        let u = f
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        let i = f
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        out.push((u, i));
    }
    Ok(out)
}

/// How interactions are divided 8:1:1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// One shuffle over all interactions.
    #[default]
    Global,
    /// Each user's interactions are shuffled and divided separately.
    PerUser,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub seed: u64,
}

impl DataSplit {
    pub fn train_matrix(&self) -> Result<SparseCsr> {
        SparseCsr::from_pairs(self.num_users, self.num_items, &self.train)
    }
}

/// Per-user item lists from a pair list, items ascending.
pub fn group_by_user(pairs: &[(usize, usize)], num_users: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); num_users];
    for &(u, i) in pairs {
        out[u].push(i);
    }
    for items in &mut out {
        items.sort_unstable();
    }
    out
}

/// `(train, validation, test)` sizes for `n` interactions: floor of a tenth
/// for each held-out part, remainder to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = n / 10;
    (n - 2 * held, held, held)
}

/// Seeded 8:1:1 split. Each part is returned sorted by `(user, item)`.
pub fn make_split(log: &InteractionLog, seed: u64, mode: SplitMode) -> Result<DataSplit> {
    if log.is_empty() {
        return Err(Error::Empty("cannot split an empty interaction log".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut assign = |pairs: &mut Vec<(usize, usize)>, rng: &mut ChaCha8Rng| {
        pairs.shuffle(rng);
        let (n_train, n_val, _) = split_sizes(pairs.len());
        train.extend_from_slice(&pairs[..n_train]);
        validation.extend_from_slice(&pairs[n_train..n_train + n_val]);
        test.extend_from_slice(&pairs[n_train + n_val..]);
    };
    match mode {
        SplitMode::Global => {
            let mut pairs = log.pairs.clone();
            pairs.sort_unstable();
            assign(&mut pairs, &mut rng);
        }
        SplitMode::PerUser => {
            let mut by_user: Vec<Vec<(usize, usize)>> = vec![Vec::new(); log.num_users];
            for &(u, i) in &log.pairs {
                by_user[u].push((u, i));
            }
            for pairs in &mut by_user {
                pairs.sort_unstable();
                assign(pairs, &mut rng);
            }
        }
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        num_users: log.num_users,
        num_items: log.num_items,
        train,
        validation,
        test,
        seed,
    })
}

/// Writes the binary feature format: `MMHF`, version, rows, cols, then `f32` payload.
pub fn write_feature_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn check_finite(m: &DenseMatrix, path: &Path) -> Result<()> {
    if let Some((r, c)) = m.first_non_finite() {
        return Err(Error::Data(format!(
            "{}: non-finite feature at row {r}, column {c}",
            path.display()
        )));
    }
    Ok(())
}

/// Loads a feature matrix, binary if the file starts with `MMHF`, CSV otherwise.
pub fn load_feature_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let m = if bytes.starts_with(FEATURE_MAGIC) {
        parse_feature_binary(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?
    } else {
        parse_feature_csv(&bytes, path)?
    };
    check_finite(&m, path)?;
    Ok(m)
}

fn parse_feature_binary(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(Error::Format("truncated feature header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature version {version}"
        )));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("shape {rows}x{cols} overflows")))?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header {rows}x{cols} needs {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DenseMatrix::from_vec(rows as usize, cols as usize, data)
}

fn parse_feature_csv(bytes: &[u8], path: &Path) -> Result<DenseMatrix> {
    let text = std::str::from_utf8(bytes).map_err(|_| {
        Error::Format(format!(
            "{}: neither MMHF binary nor UTF-8 CSV",
            path.display()
        ))
    })?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("not a number: `{}`", field.trim())))?;
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(parse_err(format!("{n} columns, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols.unwrap_or(0), data)
}

pub const CSR_MAGIC: &[u8; 4] = b"MMHS";
pub const CSR_VERSION: u32 = 1;

/// Writes a sparse matrix: `MMHS`, u32 version, u64 rows, cols, nnz, then
/// the u64 row pointers, u64 column indices and f64 values, little-endian.
pub fn write_csr(path: &Path, m: &SparseCsr) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CSR_MAGIC)?;
    w.write_all(&CSR_VERSION.to_le_bytes())?;
    for n in [m.rows(), m.cols(), m.nnz()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &p in m.row_ptr().iter().chain(m.col_indices()) {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    for v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csr(path: &Path) -> Result<SparseCsr> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 || &bytes[..4] != CSR_MAGIC {
        return Err(fail("not a sparse matrix file"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    if u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) != CSR_VERSION {
        return Err(fail("unsupported sparse matrix version"));
    }
    let (rows, cols, nnz) = (word(8) as usize, word(16) as usize, word(24) as usize);
    let need = rows
        .checked_add(1)
        .and_then(|r| r.checked_add(nnz.checked_mul(2)?))
        .and_then(|w| w.checked_mul(8))
        .and_then(|b| b.checked_add(32));
    if need != Some(bytes.len()) {
        return Err(fail("payload length does not match header"));
    }
    let mut off = 32;
    let mut take = |n: usize| -> Vec<usize> {
        let v = (0..n).map(|k| word(off + 8 * k) as usize).collect();
        off += 8 * n;
        v
    };
    let row_ptr = take(rows + 1);
    let col_indices = take(nnz);
    let values = bytes[off..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    SparseCsr::new(rows, cols, row_ptr, col_indices, values)
}

/// Shape of a synthetic corpus with planted user/item communities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Probability that an interaction goes to an item outside the user's block.
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "SyntheticSpec::default_modalities")]
    pub modalities: Vec<(ModalityTag, usize)>,
}

impl SyntheticSpec {
    pub const OWN_BLOCK_FRACTION: f64 = 0.3;
    pub const FEATURE_JITTER: f64 = 0.1;

    fn default_modalities() -> Vec<(ModalityTag, usize)> {
        vec![(ModalityTag::Visual, 16), (ModalityTag::Textual, 24)]
    }

    pub fn new(users: usize, items: usize, blocks: usize, noise: f64, seed: u64) -> Self {
        Self {
            users,
            items,
            blocks,
            noise,
            seed,
            modalities: Self::default_modalities(),
        }
    }

    /// The 200-user, 120-item, 4-community corpus used for desk-scale runs.
    pub fn preset(seed: u64) -> Self {
        Self::new(200, 120, 4, 0.05, seed)
    }

    pub fn item_block(&self, item: usize) -> usize {
        item / (self.items / self.blocks)
    }

    pub fn user_block(&self, user: usize) -> usize {
        user / (self.users / self.blocks)
    }
}

/// Users and items split into contiguous communities. Each user picks
/// `round(0.3 · items_per_block)` distinct items; each pick leaves the user's
/// own block with probability `noise`. Every modality's features are the
/// one-hot block centroid plus N(0, 0.1²) jitter.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(InteractionLog, ModalityBundle)> {
    let SyntheticSpec {
        users,
        items,
        blocks,
        noise,
        seed,
        ..
    } = *spec;
    if blocks == 0 || users % blocks != 0 || items % blocks != 0 {
        return Err(Error::Parameter(format!(
            "{blocks} blocks must divide {users} users and {items} items"
        )));
    }
    if users == 0 || items == 0 {
        return Err(Error::Parameter(
            "synthetic corpus needs users and items".into(),
        ));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Parameter(format!(
            "noise must lie in [0, 1], got {noise}"
        )));
    }
    if spec.modalities.is_empty() {
        return Err(Error::Parameter("synthetic corpus needs a modality".into()));
    }
    let per_block = items / blocks;
    let picks = ((SyntheticSpec::OWN_BLOCK_FRACTION * per_block as f64).round() as usize).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(users * picks);
    for u in 0..users {
        let b = spec.user_block(u);
        let own: Vec<usize> = (b * per_block..(b + 1) * per_block).collect();
        let mut chosen: Vec<usize> = Vec::with_capacity(picks);
        while chosen.len() < picks {
            let cross = blocks > 1 && rng.random_bool(noise);
            let item = if cross {
                let mut i = rng.random_range(0..items - per_block);
                if i >= b * per_block {
                    i += per_block;
                }
                i
            } else {
                own[rng.random_range(0..per_block)]
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|i| (u, i)));
    }
    let mut log = InteractionLog::from_pairs(users, items, pairs)?;
    log.user_ids = (0..users).map(|u| format!("u{u}")).collect();
    log.item_ids = (0..items).map(|i| format!("i{i}")).collect();

    let jitter = Normal::new(0.0, SyntheticSpec::FEATURE_JITTER).expect("valid sigma");
    let mut feat_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_FEA7_0000_0000);
    let mut blocks_out = Vec::with_capacity(spec.modalities.len());
    for &(tag, dim) in &spec.modalities {
        if dim < blocks {
            return Err(Error::Parameter(format!(
                "{tag} dimension {dim} cannot hold {blocks} one-hot centroids"
            )));
        }
        let mut m = DenseMatrix::zeros(items, dim);
        for i in 0..items {
            let b = spec.item_block(i);
            for (c, v) in m.row_mut(i).iter_mut().enumerate() {
                let centroid = if c == b { 1.0 } else { 0.0 };
                *v = centroid + jitter.sample(&mut feat_rng);
            }
        }
        blocks_out.push((tag, m));
    }
    Ok((log, ModalityBundle::new(blocks_out)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_basic_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        std::fs::write(&p, "a\tx\na\ty\tignored\n\na\tx\n").unwrap();
        let log = load_interactions(&p).unwrap();
        assert_eq!((log.num_users, log.num_items), (1, 2));
        assert_eq!(log.pairs, vec![(0, 0), (0, 1)]);
        assert_eq!(log.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        std::fs::write(&p, "a\tx\nbroken\n").unwrap();
        match load_interactions(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(59541), (47633, 5954, 5954));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let pairs: Vec<_> = (0..50).map(|k| (k % 7, k)).collect();
        let log = InteractionLog::from_pairs(7, 50, pairs).unwrap();
        for mode in [SplitMode::Global, SplitMode::PerUser] {
            let a = make_split(&log, 3, mode).unwrap();
            assert_eq!(a, make_split(&log, 3, mode).unwrap());
            let mut all: Vec<_> = a
                .train
                .iter()
                .chain(&a.validation)
                .chain(&a.test)
                .copied()
                .collect();
            all.sort_unstable();
            let mut want = log.pairs.clone();
            want.sort_unstable();
            assert_eq!(all, want);
        }
        let g = make_split(&log, 3, SplitMode::Global).unwrap();
        assert_eq!(
            (g.train.len(), g.validation.len(), g.test.len()),
            (40, 5, 5)
        );
    }

    #[test]
    fn feature_binary_header_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let mut f = File::create(&p).unwrap();
        f.write_all(b"MMHF").unwrap();
        f.write_all(&1u32.to_le_bytes()).unwrap();
        f.write_all(&3u64.to_le_bytes()).unwrap();
        f.write_all(&2u64.to_le_bytes()).unwrap();
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        drop(f);
        let m = load_feature_matrix(&p).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m.row(2), &[5.0, 6.0]);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_feature_matrix(&p), Err(Error::Format(_))));
    }

    #[test]
    fn feature_non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let m = DenseMatrix::from_rows(&[[1.0, f64::NAN]]);
        write_feature_matrix(&p, &m).unwrap();
        match load_feature_matrix(&p) {
            Err(Error::Data(msg)) => assert!(msg.contains("row 0, column 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_csv_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "1,2,3\n4, 5 ,6\n").unwrap();
        let m = load_feature_matrix(&p).unwrap();
        assert_eq!(
            m,
            DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        );
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(
            load_feature_matrix(&p),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn synthetic_without_noise_stays_in_block() {
        let spec = SyntheticSpec::new(40, 20, 4, 0.0, 5);
        let (log, feats) = generate_synthetic(&spec).unwrap();
        assert!(log
            .pairs
            .iter()
            .all(|&(u, i)| spec.user_block(u) == spec.item_block(i)));
        assert_eq!(feats.num_items(), 20);
        let (log2, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(log, log2);
        assert!(generate_synthetic(&SyntheticSpec::new(10, 20, 3, 0.0, 1)).is_err());
    }

    #[test]
    fn csr_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csr");
        let m = SparseCsr::from_triplets(3, 4, &[(0, 1, 1.5), (2, 0, -2.0), (2, 3, 0.25)]).unwrap();
        write_csr(&path, &m).unwrap();
        assert_eq!(read_csr(&path).unwrap(), m);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_csr(&path), Err(Error::Format(_))));
    }
}
