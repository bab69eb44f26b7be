//! Model file layout:
//!
//! ```text
//! magic     8 bytes   "CMXENC01"
//! hlen      u64 LE    length of the JSON header in bytes
//! header    hlen      UTF-8 JSON: format_version, encoder_config,
//!                     train_config, tokenizer_config, vocab_ref, tensors
//! payload   ...       every tensor as little-endian f32, row-major, in the
//!                     fixed order of `TransformerParams::tensor_meta`
//! ```
//!
//! Tensor offsets in the header are byte offsets from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, TrainConfig, TransformerParams};
use crate::artifact::ArtifactRef;
use crate::error::{Error, Result};
use crate::tokenizer::TokenizerConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CMXENC01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    #[serde(default)]
    tokenizer_config: TokenizerConfig,
    vocab_ref: ArtifactRef,
    tensors: Vec<TensorEntry>,
}

/// A trained encoder together with the configuration needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub tokenizer_config: TokenizerConfig,
    pub vocab_ref: ArtifactRef,
    pub params: TransformerParams,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.validate(&self.encoder_config)?;
        let mut offset = 0u64;
        let tensors = self
            .params
            .tensor_meta()
            .into_iter()
            .map(|m| {
                let entry = TensorEntry {
                    name: m.name,
                    offset,
                    shape: m.shape.clone(),
                };
                offset += 4 * m.shape.iter().product::<usize>() as u64;
                entry
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            format_version: MODEL_FORMAT_VERSION,
            encoder_config: self.encoder_config.clone(),
            train_config: self.train_config.clone(),
            tokenizer_config: self.tokenizer_config,
            vocab_ref: self.vocab_ref.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for s in self.params.slices() {
            for &v in s {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("model file: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        header.encoder_config.validate()?;
        if header.tokenizer_config.max_len != header.encoder_config.max_len {
            return Err(bad(format!(
                "tokenizer max_len {} differs from encoder max_len {}",
                header.tokenizer_config.max_len, header.encoder_config.max_len
            )));
        }
        let payload = &bytes[header_end..];
        let mut params = TransformerParams::zeros(&header.encoder_config);
        let meta = params.tensor_meta();
        if meta.len() != header.tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, header lists {}",
                meta.len(),
                header.tensors.len()
            )));
        }
        let mut expected_offset = 0u64;
        for ((m, entry), dst) in meta.iter().zip(&header.tensors).zip(params.slices_mut()) {
            if m.name != entry.name || m.shape != entry.shape || entry.offset != expected_offset {
                return Err(bad(format!(
                    "tensor {} ({:?} at {}) does not match the expected {} ({:?} at {})",
                    entry.name, entry.shape, entry.offset, m.name, m.shape, expected_offset
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * dst.len();
            let raw = payload
                .get(start..end)
                .ok_or_else(|| bad(format!("payload truncated in tensor {}", entry.name)))?;
            for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
            expected_offset = end as u64;
        }
        if payload.len() as u64 != expected_offset {
            return Err(bad(format!(
                "payload has {} bytes, expected {expected_offset}",
                payload.len()
            )));
        }
        params.validate(&header.encoder_config)?;
        Ok(ModelFile {
            encoder_config: header.encoder_config,
            train_config: header.train_config,
            tokenizer_config: header.tokenizer_config,
            vocab_ref: header.vocab_ref,
            params,
        })
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    fs::write(path, model.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_bytes(&bytes)
}
