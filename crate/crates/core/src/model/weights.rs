// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weight bundles and the on-disk weights format.
//!
//! Layout of a weights file:
//!
//! 1. one JSON header line terminated by `\n` holding the [`ModelConfig`],
//!    the vocabulary and the ordered tensor manifest (`name`, `shape`);
//! 2. the raw little-endian `f32` payload of every tensor, in manifest order;
//! 3. an 8-byte little-endian length followed by that many bytes of
//!    lowercase hex SHA-256 over the payload.
//!
//! Tensors are upcast to `f64` on load. Bundles built in memory are rounded
//! through `f32` so that a saved and reloaded bundle is bit-identical to the
//! one that was written.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "prism-weights";
const FORMAT_VERSION: u32 = 1;
const CHECKSUM_HEX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub weight: Array1<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of one transformer block (attention then MLP, both pre-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln_1: LayerNormParams,
    /// `[d_model, 3 * d_model]`, columns ordered query, key, value.
    pub attn_qkv_w: Array2<f64>,
    pub attn_qkv_b: Array1<f64>,
    pub attn_out_w: Array2<f64>,
    pub attn_out_b: Array1<f64>,
    pub ln_2: LayerNormParams,
    pub mlp_in_w: Array2<f64>,
    pub mlp_in_b: Array1<f64>,
    pub mlp_out_w: Array2<f64>,
    pub mlp_out_b: Array1<f64>,
}

/// Immutable model parameters plus the vocabulary they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub wte: Array2<f64>,
    pub wpe: Array2<f64>,
    pub blocks: Vec<BlockWeights>,
    pub ln_f: LayerNormParams,
    pub unembed: Array2<f64>,
    checksum: String,
}

/// A named flat tensor as stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

impl WeightBundle {
    /// Assemble a bundle from named tensors, checking every shape against the
    /// config. Values are rounded through `f32`.
    pub fn from_tensors(
        config: ModelConfig,
        vocab: Vec<String>,
        tensors: Vec<NamedTensor>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let manifest = config.tensor_manifest();
        if tensors.len() != manifest.len() {
            return Err(Error::MalformedHeader(format!(
                "expected {} tensors, got {}",
                manifest.len(),
                tensors.len()
            )));
        }
        let mut by_name = std::collections::HashMap::new();
        for t in tensors {
            let numel: usize = t.shape.iter().product();
            if numel != t.data.len() {
                return Err(Error::ShapeMismatch {
                    tensor: t.name.clone(),
                    expected: t.shape.clone(),
                    found: vec![t.data.len()],
                });
            }
            if by_name.insert(t.name.clone(), t).is_some() {
                return Err(Error::MalformedHeader("duplicate tensor name".into()));
            }
        }
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::MalformedHeader(format!("missing tensor `{name}`")))?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    tensor: name.to_string(),
                    expected: shape.to_vec(),
                    found: t.shape,
                });
            }
            Ok(t.data.into_iter().map(|v| v as f32 as f64).collect())
        };
        let mat = |data: Vec<f64>, shape: &[usize]| {
            Array2::from_shape_vec((shape[0], shape[1]), data).expect("shape checked")
        };

        let d = config.d_model;
        let mut shapes = manifest.iter().map(|(_, s)| s.clone());
        let mut next = || shapes.next().expect("manifest length checked");

        let s = next();
        let wte = mat(take("wte", &s)?, &s);
        let s = next();
        let wpe = mat(take("wpe", &s)?, &s);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("blocks.{l}");
            let ln_1 = LayerNormParams {
                weight: Array1::from(take(&format!("{p}.ln_1.weight"), &next())?),
                bias: Array1::from(take(&format!("{p}.ln_1.bias"), &next())?),
            };
            let s = next();
            let attn_qkv_w = mat(take(&format!("{p}.attn.c_attn.weight"), &s)?, &s);
            let attn_qkv_b = Array1::from(take(&format!("{p}.attn.c_attn.bias"), &next())?);
            let s = next();
            let attn_out_w = mat(take(&format!("{p}.attn.c_proj.weight"), &s)?, &s);
            let attn_out_b = Array1::from(take(&format!("{p}.attn.c_proj.bias"), &next())?);
            let ln_2 = LayerNormParams {
                weight: Array1::from(take(&format!("{p}.ln_2.weight"), &next())?),
                bias: Array1::from(take(&format!("{p}.ln_2.bias"), &next())?),
            };
            let s = next();
            let mlp_in_w = mat(take(&format!("{p}.mlp.c_fc.weight"), &s)?, &s);
            let mlp_in_b = Array1::from(take(&format!("{p}.mlp.c_fc.bias"), &next())?);
            let s = next();
            let mlp_out_w = mat(take(&format!("{p}.mlp.c_proj.weight"), &s)?, &s);
            let mlp_out_b = Array1::from(take(&format!("{p}.mlp.c_proj.bias"), &next())?);
            blocks.push(BlockWeights {
                ln_1,
                attn_qkv_w,
                attn_qkv_b,
                attn_out_w,
                attn_out_b,
                ln_2,
                mlp_in_w,
                mlp_in_b,
                mlp_out_w,
                mlp_out_b,
            });
        }
        let ln_f = LayerNormParams {
            weight: Array1::from(take("ln_f.weight", &next())?),
            bias: Array1::from(take("ln_f.bias", &next())?),
        };
        let s = next();
        let unembed = mat(take("unembed", &s)?, &s);
        debug_assert_eq!(wte.ncols(), d);

        let mut bundle = WeightBundle {
            config,
            vocab,
            wte,
            wpe,
            blocks,
            ln_f,
            unembed,
            checksum: String::new(),
        };
        bundle.checksum = hex::encode(Sha256::digest(bundle.payload()));
        Ok(bundle)
    }

    /// Hex SHA-256 of the tensor payload.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// All tensors in manifest order.
    pub fn tensors(&self) -> Vec<NamedTensor> {
        let flat2 = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        let flat1 = |a: &Array1<f64>| a.to_vec();
        let mut data: Vec<Vec<f64>> = vec![flat2(&self.wte), flat2(&self.wpe)];
        for b in &self.blocks {
            data.push(flat1(&b.ln_1.weight));
            data.push(flat1(&b.ln_1.bias));
            data.push(flat2(&b.attn_qkv_w));
            data.push(flat1(&b.attn_qkv_b));
            data.push(flat2(&b.attn_out_w));
            data.push(flat1(&b.attn_out_b));
            data.push(flat1(&b.ln_2.weight));
            data.push(flat1(&b.ln_2.bias));
            data.push(flat2(&b.mlp_in_w));
            data.push(flat1(&b.mlp_in_b));
            data.push(flat2(&b.mlp_out_w));
            data.push(flat1(&b.mlp_out_b));
        }
        data.push(flat1(&self.ln_f.weight));
        data.push(flat1(&self.ln_f.bias));
        data.push(flat2(&self.unembed));
        self.config
            .tensor_manifest()
            .into_iter()
            .zip(data)
            .map(|((name, shape), data)| NamedTensor { name, shape, data })
            .collect()
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.tensors() {
            for v in t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Serialize to the weights file format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors: self
                .config
                .tensor_manifest()
                .into_iter()
                .map(|(name, shape)| ManifestEntry { name, shape })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.extend_from_slice(&self.payload());
        out.extend_from_slice(&(self.checksum.len() as u64).to_le_bytes());
        out.extend_from_slice(self.checksum.as_bytes());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        header.config.validate()?;

        let expected = header.config.tensor_manifest();
        if header.tensors.len() != expected.len() {
            return Err(Error::MalformedHeader(format!(
                "manifest lists {} tensors, config implies {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
            if &entry.name != name {
                return Err(Error::MalformedHeader(format!(
                    "manifest entry `{}` where `{name}` was expected",
                    entry.name
                )));
            }
            if &entry.shape != shape {
                return Err(Error::ShapeMismatch {
                    tensor: name.clone(),
                    expected: shape.clone(),
                    found: entry.shape.clone(),
                });
            }
        }

        let body = &bytes[newline + 1..];
        let (payload, stored_checksum) = split_trailer(body);

        let mut tensors = Vec::with_capacity(expected.len());
        let mut offset = 0usize;
        for entry in &header.tensors {
            let numel: usize = entry.shape.iter().product();
            let need = numel * 4;
            if payload.len() < offset + need {
                let available = payload.len().saturating_sub(offset) / 4;
                return Err(Error::ShapeMismatch {
                    tensor: entry.name.clone(),
                    expected: entry.shape.clone(),
                    found: vec![available],
                });
            }
            let data = payload[offset..offset + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            offset += need;
            tensors.push(NamedTensor {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                data,
            });
        }
        let stored_checksum = stored_checksum
            .ok_or_else(|| Error::MalformedHeader("missing checksum trailer".into()))?;
        if offset != payload.len() {
            return Err(Error::MalformedHeader(format!(
                "{} unexpected payload bytes after the last tensor",
                payload.len() - offset
            )));
        }
        let actual = hex::encode(Sha256::digest(payload));
        if actual != stored_checksum {
            return Err(Error::ChecksumMismatch {
                expected: stored_checksum,
                actual,
            });
        }
        Self::from_tensors(header.config, header.vocab, tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Split `payload || len || hex` into its parts. When no well-formed trailer
/// is found the whole body is treated as payload.
fn split_trailer(body: &[u8]) -> (&[u8], Option<String>) {
    let trailer = 8 + CHECKSUM_HEX_LEN;
    if body.len() >= trailer {
        let at = body.len() - trailer;
        let mut len = [0u8; 8];
        len.copy_from_slice(&body[at..at + 8]);
        let hex_part = &body[at + 8..];
        if u64::from_le_bytes(len) == CHECKSUM_HEX_LEN as u64
            && hex_part.iter().all(|b| b.is_ascii_hexdigit())
        {
            return (
                &body[..at],
                Some(String::from_utf8_lossy(hex_part).into_owned()),
            );
        }
    }
    (body, None)
}
