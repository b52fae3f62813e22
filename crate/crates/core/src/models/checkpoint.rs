//! Versioned binary model checkpoints.
//!
//! Layout (little endian): 8-byte magic, `u32` version, `u64` header length
//! and a JSON [`CheckpointHeader`], `u64` parameter count, then for each
//! parameter `u64` rows, `u64` cols and the `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Architecture, FunckModel, ModelError, Result};
use crate::data::FeatureLayout;
use crate::nn::Module;
use crate::objectives::ObjectiveSpec;

const MAGIC: &[u8; 8] = b"FUNCKCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Fingerprint of the dataset schema the model was trained on.
    pub schema_hash: String,
    pub objective: ObjectiveSpec,
    pub architecture: Architecture,
    pub layout: FeatureLayout,
    pub seed: u64,
    /// Epoch (1-based) whose parameters are stored.
    pub epoch: usize,
    pub validation_loss: f64,
    /// Free-form run information (configuration, preprocessing state).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: FunckModel,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn encode(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&checkpoint.header).map_err(|e| bad(e.to_string()))?;
    let params = checkpoint.model.parameters();
    let mut buf = Vec::with_capacity(64 + header.len() + 8 * checkpoint.model.num_parameters());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.ncols() as u64).to_le_bytes());
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Writes atomically: the bytes go to a sibling temporary file that is then renamed.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = encode(checkpoint)?;
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io)?;
    file.write_all(&bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| bad(format!("truncated: {e}")))?;
        Ok(b)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.bytes(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let mut r = Cursor { inner: reader };
    if r.bytes(8)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.bytes(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = r.u64()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(&r.bytes(len)?).map_err(|e| bad(e.to_string()))?;
    let mut model = FunckModel::zeros(header.architecture.clone())?;
    let count = r.u64()? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(bad(format!(
            "{count} parameters stored, architecture has {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if (rows, cols) != p.dim() {
            return Err(bad(format!(
                "parameter {i} stored as {rows}x{cols}, expected {:?}",
                p.dim()
            )));
        }
        let raw = r.bytes(rows * cols * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        **p = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
    }
    Ok(Checkpoint { header, model })
}

/// Loads a checkpoint, checking its schema fingerprint when `expected_schema` is given.
pub fn load_checkpoint(path: &Path, expected_schema: Option<&str>) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let checkpoint = read_checkpoint(BufReader::new(file))?;
    if let Some(expected) = expected_schema {
        if checkpoint.header.schema_hash != expected {
            return Err(ModelError::SchemaMismatch {
                expected: expected.to_string(),
                found: checkpoint.header.schema_hash.clone(),
            });
        }
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NumericFeature;
    use crate::objectives::resolve_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let spec = ObjectiveSpec::cpfsi(3.0, 16.0);
        let arch = Architecture::new(2, 3, vec![5, 4], &resolve_weights(&spec).unwrap());
        let model = FunckModel::new(arch.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        Checkpoint {
            header: CheckpointHeader {
                schema_hash: "abc".into(),
                objective: spec,
                architecture: arch,
                layout: FeatureLayout {
                    numeric: vec![
                        NumericFeature {
                            name: "u".into(),
                            column: 0,
                            variance: 1.0,
                        },
                        NumericFeature {
                            name: "v".into(),
                            column: 1,
                            variance: 1.0,
                        },
                    ],
                    categorical: vec![],
                    fidelity: 0,
                },
                seed: 4,
                epoch: 12,
                validation_loss: 1.234_567_890_123,
                metadata: serde_json::json!({"note": "x"}),
            },
            model,
        }
    }

    #[test]
    fn round_trip_and_schema_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path, Some("abc")).unwrap(), ck);
        assert!(matches!(
            load_checkpoint(&path, Some("other")),
            Err(ModelError::SchemaMismatch { .. })
        ));
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample()).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        let mut version = bytes;
        version[8] = 7;
        assert!(read_checkpoint(version.as_slice()).is_err());
    }
}
