//! Single-file checkpoints: magic, a length-prefixed JSON header, then every
//! parameter as little-endian f32 in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"QACKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Training facts stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub val_perplexity: Option<f64>,
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub vocab_hash: String,
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let tensors: Vec<TensorEntry> = model
        .store
        .iter()
        .map(|(_, p)| TensorEntry { name: p.name.clone(), rows: p.value.rows(), cols: p.value.cols() })
        .collect();
    let header = CheckpointHeader {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        vocab_hash: model.vocab.hash(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&to_bytes(model, meta)).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let mut header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.vocab.rebuild_index();
    if header.vocab.hash() != header.vocab_hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    Ok((header, end))
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let (header, mut offset) = read_header(bytes)?;
    let seed = header.meta.seed;
    let mut model = Model::new(header.config, header.vocab, seed)?;
    if model.store.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model expects {}",
            header.tensors.len(),
            model.store.len()
        )));
    }
    for entry in &header.tensors {
        let id = model.store.id(&entry.name).ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        let expected = model.store.get(id).shape();
        if expected != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {} is {}x{}, model expects {}x{}",
                entry.name, entry.rows, entry.cols, expected.0, expected.1
            )));
        }
        let n = entry.rows * entry.cols;
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("truncated data for {}", entry.name)));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {}", entry.name)));
        }
        *model.store.get_mut(id) = Tensor::from_vec(entry.rows, entry.cols, data);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((model, header.meta))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of a file's bytes.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
