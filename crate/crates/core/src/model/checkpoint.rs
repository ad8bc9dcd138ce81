// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `LFCKPT01`, a little-endian `u64` header length,
//! a JSON header (configs, seed, metadata, tensor index, SHA-256 of the
//! payload), then every tensor as little-endian `f64` in index order.
//! Identical contents always produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackAttentionConfig, ModelConfig};
use super::forward::Transformer;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"LFCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    back_attention: Option<BackAttentionConfig>,
    seed: u64,
    metadata: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

/// A model plus free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer<f64>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new<S: Scalar>(model: &Transformer<S>) -> Self {
        Self {
            model: model.cast(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_metadata(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.metadata.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.model.weights.named() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.model.config.clone(),
            back_attention: self.model.back_attention.clone(),
            seed: self.model.config.seed,
            metadata: self.metadata.clone(),
            tensors,
            payload_sha256: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(bad("payload hash mismatch"));
        }
        let mut model = Transformer::<f64>::new(header.config, header.back_attention)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + 8 * n)
                .ok_or_else(|| bad("tensor extends past payload"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        model.weights.assign(tensors)?;
        if model.config.seed != header.seed {
            return Err(bad("seed disagrees with config"));
        }
        Ok(Self {
            model,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// SHA-256 over the named tensors whose names satisfy `select`.
pub fn weights_digest<S: Scalar>(model: &Transformer<S>, select: impl Fn(&str) -> bool) -> String {
    let mut h = Sha256::new();
    for (name, t) in model.weights.named() {
        if !select(&name) {
            continue;
        }
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
