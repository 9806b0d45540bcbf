//! Binary checkpoint: the four parameter tables plus the model config.
//!
//! Layout (little-endian): `MMHC`, u32 version, u32 table count, then per
//! table a u32 name length, the UTF-8 name, u64 rows, u64 cols and the f64
//! payload; then a u64 length and the config as JSON; finally a u64 length
//! and the UTF-8 config digest (possibly empty).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{ModelParams, TABLE_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMHC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters, the config they were trained with, and the run digest.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub digest: String,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config: &ModelConfig,
    digest: &str,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&4u32.to_le_bytes())?;
    for (name, table) in params.tables() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(table.rows() as u64).to_le_bytes())?;
        w.write_all(&(table.cols() as u64).to_le_bytes())?;
        for x in table.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    let json = serde_json::to_vec(config)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(digest.len() as u64).to_le_bytes())?;
    w.write_all(digest.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("checkpoint truncated in {what}"))
        }
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "header")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let version = read_u32(&mut r, "header")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u32(&mut r, "header")?;
    if count as usize != TABLE_NAMES.len() {
        return Err(Error::Format(format!("expected 4 tables, found {count}")));
    }
    let mut tables = Vec::with_capacity(4);
    for expected in TABLE_NAMES {
        let len = read_u32(&mut r, "table name")? as usize;
        if len > 256 {
            return Err(Error::Format(format!("table name length {len}")));
        }
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name, "table name")?;
        if name != expected.as_bytes() {
            return Err(Error::Format(format!(
                "expected table `{expected}`, found `{}`",
                String::from_utf8_lossy(&name)
            )));
        }
        let rows = read_u64(&mut r, expected)? as usize;
        let cols = read_u64(&mut r, expected)? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("table `{expected}` shape overflows")))?;
        let mut bytes = vec![0u8; n * 8];
        read_exact(&mut r, &mut bytes, expected)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tables.push(DenseMatrix::from_vec(rows, cols, data)?);
    }
    let len = read_u64(&mut r, "config")? as usize;
    let mut json = vec![0u8; len];
    read_exact(&mut r, &mut json, "config")?;
    let config: ModelConfig = serde_json::from_slice(&json)?;
    let len = read_u64(&mut r, "digest")? as usize;
    if len > 1024 {
        return Err(Error::Format(format!("digest length {len}")));
    }
    let mut digest = vec![0u8; len];
    read_exact(&mut r, &mut digest, "digest")?;
    let digest =
        String::from_utf8(digest).map_err(|_| Error::Format("digest is not UTF-8".into()))?;
    let tables: [DenseMatrix; 4] = tables.try_into().expect("four tables");
    Ok(Checkpoint {
        params: ModelParams::from_tables(tables)?,
        config,
        digest,
    })
}
