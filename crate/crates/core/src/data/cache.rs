//! Binary cache of an [`EncodedDataset`].
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u64` length of the
//! JSON-encoded [`FeatureLayout`] followed by the JSON bytes, `u64` rows,
//! `u64` cols, `rows * cols` `f64` values in row-major order, then one byte
//! per row for each of `y`, `s` and the label mask.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::preprocess::{EncodedDataset, FeatureLayout};
use super::{DataError, Result};

const MAGIC: &[u8; 8] = b"FUNCKDS1";
pub const CACHE_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cache_err(e: std::io::Error) -> DataError {
    DataError::Cache(e.to_string())
}

pub fn write_cache(path: &Path, data: &EncodedDataset) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_cache_to(&mut w, data)?;
    w.flush().map_err(io_err(path))
}

pub fn write_cache_to<W: Write>(w: &mut W, data: &EncodedDataset) -> Result<()> {
    let layout = serde_json::to_vec(&data.layout).map_err(|e| DataError::Cache(e.to_string()))?;
    let (rows, cols) = data.x.dim();
    let mut buf = Vec::with_capacity(40 + layout.len() + rows * cols * 8 + rows * 3);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layout.len() as u64).to_le_bytes());
    buf.extend_from_slice(&layout);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    buf.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data.x.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for column in [&data.y, &data.s, &data.label_mask] {
        buf.extend(column.iter().map(|&b| u8::from(b)));
    }
    w.write_all(&buf).map_err(cache_err)
}

pub fn read_cache(path: &Path) -> Result<EncodedDataset> {
    let file = File::open(path).map_err(io_err(path))?;
    read_cache_from(&mut BufReader::new(file))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(cache_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bools<R: Read>(r: &mut R, n: usize) -> Result<Vec<bool>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(cache_err)?;
    b.into_iter()
        .map(|v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(DataError::Cache(format!("invalid flag byte {other}"))),
        })
        .collect()
}

pub fn read_cache_from<R: Read>(r: &mut R) -> Result<EncodedDataset> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(cache_err)?;
    if &magic != MAGIC {
        return Err(DataError::Cache("bad magic".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(cache_err)?;
    let version = u32::from_le_bytes(version);
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!(
            "unsupported version {version}, expected {CACHE_VERSION}"
        )));
    }
    let layout_len = read_u64(r)? as usize;
    let mut layout = vec![0u8; layout_len];
    r.read_exact(&mut layout).map_err(cache_err)?;
    let layout: FeatureLayout =
        serde_json::from_slice(&layout).map_err(|e| DataError::Cache(e.to_string()))?;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    if cols != layout.width() {
        return Err(DataError::Cache(format!(
            "matrix has {cols} columns but layout describes {}",
            layout.width()
        )));
    }
    let mut raw = vec![0u8; rows * cols * 8];
    r.read_exact(&mut raw).map_err(cache_err)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let x = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| DataError::Cache(e.to_string()))?;
    let y = read_bools(r, rows)?;
    let s = read_bools(r, rows)?;
    let label_mask = read_bools(r, rows)?;
    Ok(EncodedDataset {
        x,
        y,
        s,
        label_mask,
        layout,
    })
}
