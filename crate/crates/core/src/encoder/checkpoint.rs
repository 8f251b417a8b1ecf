//! Binary checkpoint format.
//!
//! ```text
//! "MDRL" | version: u16 LE | header_len: u32 LE | header JSON (UTF-8)
//! | table: rows*dim f32 LE, row-major
//! | query tower layers, then target tower layers: weight (dim*dim) then bias (dim), f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Dense, EmbeddingModel, ModelConfig, TowerParams};
use super::EncoderError;
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDRL";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    rows: usize,
    dim: usize,
}

pub fn encode_checkpoint(model: &EmbeddingModel<f32>) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: model.config,
        vocab_hash: model.vocab_hash.clone(),
        rows: model.rows,
        dim: model.dim(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(10 + header.len() + model.table.len() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    put(&model.table);
    for layer in model.query_tower.layers.iter().chain(&model.target_tower.layers) {
        put(&layer.weight);
        put(&layer.bias);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EmbeddingModel<f32>, EncoderError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(EncoderError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(EncoderError::Truncated { expected: 10, found: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(EncoderError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = 10 + header_len;
    if bytes.len() < body {
        return Err(EncoderError::Truncated { expected: body, found: bytes.len() });
    }
    let header: Header = serde_json::from_slice(&bytes[10..body]).map_err(|e| EncoderError::Header(e.to_string()))?;
    if header.dim != header.config.dim || header.dim == 0 {
        return Err(EncoderError::Header(format!("dim {} disagrees with config", header.dim)));
    }
    let dim = header.dim;
    let layers = header.config.tower_layers;
    let floats = header
        .rows
        .checked_mul(dim)
        .and_then(|t| t.checked_add(2 * layers * (dim * dim + dim)))
        .ok_or_else(|| EncoderError::Header("parameter count overflows".into()))?;
    let expected = body + floats * 4;
    if bytes.len() != expected {
        return Err(EncoderError::Truncated { expected, found: bytes.len() });
    }
    let mut cursor = bytes[body..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| cursor.by_ref().take(n).collect::<Vec<f32>>();
    let table = take(header.rows * dim);
    let mut tower = || TowerParams {
        layers: (0..layers).map(|_| Dense { weight: take(dim * dim), bias: take(dim) }).collect(),
    };
    let query_tower = tower();
    let target_tower = tower();
    Ok(EmbeddingModel {
        config: header.config,
        vocab_hash: header.vocab_hash,
        rows: header.rows,
        table,
        query_tower,
        target_tower,
    })
}

pub fn save_checkpoint(model: &EmbeddingModel<f32>, path: &Path) -> Result<(), EncoderError> {
    fs::write(path, encode_checkpoint(model)).map_err(|source| EncoderError::Io { path: path.display().to_string(), source })
}

/// Loads a checkpoint, checking it against `vocab` when one is supplied.
pub fn load_checkpoint(path: &Path, vocab: Option<&Vocabulary>) -> Result<EmbeddingModel<f32>, EncoderError> {
    let bytes = fs::read(path).map_err(|source| EncoderError::Io { path: path.display().to_string(), source })?;
    let model = decode_checkpoint(&bytes)?;
    if let Some(v) = vocab {
        let digest = v.digest();
        if digest != model.vocab_hash || v.len() != model.rows {
            return Err(EncoderError::VocabMismatch { checkpoint: model.vocab_hash, vocab: digest });
        }
    }
    Ok(model)
}
