//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "GPT2NLN1"
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON:
//!            { "config": ModelConfig,
//!              "norms": { site: { mode, sigma_bar, sigma0_bar, flags... } },
//!              "tensors": { name: { dtype, shape, offset } } }
//! payload    raw tensors in index (name) order; offsets are relative to
//!            the first payload byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::gpt::{AttnNorm, GptModel};
use crate::error::{Error, Result};
use crate::norm::{NormMode, NormSiteId, NormState, SiteKind};
use crate::numerics::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"GPT2NLN1";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormHeader {
    mode: NormMode,
    sigma_bar: f64,
    sigma0_bar: f64,
    special_bos_active: bool,
    special_eot_active: bool,
    center_mean: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    norms: BTreeMap<String, NormHeader>,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Serializes `model` to the checkpoint byte layout.
pub fn encode<F: Scalar>(model: &GptModel<F>) -> Vec<u8> {
    let mut norms = BTreeMap::new();
    for site in model.sites() {
        let s = model.norm_state(site).expect("listed site exists");
        norms.insert(
            site.to_string(),
            NormHeader {
                mode: s.mode,
                sigma_bar: s.sigma_bar,
                sigma0_bar: s.sigma0_bar,
                special_bos_active: s.special_bos_active,
                special_eot_active: s.special_eot_active,
                center_mean: s.center_mean,
            },
        );
    }
    let mut named: BTreeMap<String, &Tensor<F>> = BTreeMap::new();
    model.visit_params(|name, t| {
        named.insert(name.to_string(), t);
    });
    let mut tensors = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in &named {
        tensors.insert(
            name.clone(),
            TensorEntry {
                dtype: F::DTYPE.to_string(),
                shape: t.shape().to_vec(),
                offset,
            },
        );
        offset += (t.len() * F::BYTES) as u64;
    }
    let header = Header {
        config: model.config,
        norms,
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in named.values() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save_checkpoint<F: Scalar>(model: &GptModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<GptModel<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn read_scalar(dtype: &str, bytes: &[u8]) -> f64 {
    match dtype {
        "f32" => f32::read_le(bytes) as f64,
        _ => f64::read_le(bytes),
    }
}

/// Parses a checkpoint; tensors stored in another precision are converted.
pub fn decode<F: Scalar>(bytes: &[u8]) -> Result<GptModel<F>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::format(0, "bad magic, not a GPT2NLN1 checkpoint"));
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::format(bytes.len() as u64, "truncated preamble"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(8, format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_start = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(12, format!("header length {header_len} runs past end")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| Error::format(PREAMBLE as u64, format!("bad header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| Error::format(PREAMBLE as u64, e.to_string()))?;
    let payload = &bytes[payload_start..];

    let mut tensors: BTreeMap<String, Tensor<F>> = BTreeMap::new();
    let mut expected_offset = 0u64;
    for (name, entry) in &header.tensors {
        let width = match entry.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => {
                return Err(Error::format(
                    PREAMBLE as u64,
                    format!("tensor {name}: unknown dtype {other}"),
                ))
            }
        };
        let n: usize = entry.shape.iter().product();
        let abs = payload_start as u64 + entry.offset;
        if entry.offset != expected_offset {
            return Err(Error::format(abs, format!("tensor {name} is out of index order")));
        }
        let start = entry.offset as usize;
        let end = start + n * width;
        if end > payload.len() {
            return Err(Error::format(
                payload_start as u64 + payload.len() as u64,
                format!("truncated payload in tensor {name}"),
            ));
        }
        let data = payload[start..end]
            .chunks_exact(width)
            .map(|c| F::of(read_scalar(&entry.dtype, c)))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| Error::format(abs, e.to_string()))?;
        tensors.insert(name.clone(), t);
        expected_offset = end as u64;
    }
    if (expected_offset as usize) < payload.len() {
        return Err(Error::format(
            payload_start as u64 + expected_offset,
            "trailing bytes after payload",
        ));
    }

    let config = header.config;
    let mut model = GptModel::<F>::init(config, 0)?;
    let h = config.d_model;
    let norm_of = |key: &str| -> Result<Option<NormState<F>>> {
        let Some(nh) = header.norms.get(key) else {
            return Ok(None);
        };
        let mut s = NormState::new(h);
        s.mode = nh.mode;
        s.sigma_bar = nh.sigma_bar;
        s.sigma0_bar = nh.sigma0_bar;
        s.special_bos_active = nh.special_bos_active;
        s.special_eot_active = nh.special_eot_active;
        s.center_mean = nh.center_mean;
        Ok(Some(s))
    };
    let mut known = 0;
    for (i, block) in model.blocks.iter_mut().enumerate() {
        let shared = norm_of(&NormSiteId::new(i, SiteKind::Ln1).to_string())?;
        let qk = norm_of(&NormSiteId::new(i, SiteKind::Ln1qk).to_string())?;
        let v = norm_of(&NormSiteId::new(i, SiteKind::Ln1v).to_string())?;
        block.attn_norm = match (shared, qk, v) {
            (Some(s), None, None) => {
                known += 1;
                AttnNorm::Shared(s)
            }
            (None, Some(qk), Some(v)) => {
                known += 2;
                AttnNorm::Split { qk, v }
            }
            (None, None, None) => AttnNorm::Removed,
            _ => {
                return Err(Error::format(
                    PREAMBLE as u64,
                    format!("block {i}: inconsistent attention norm layout"),
                ))
            }
        };
        block.mlp_norm = norm_of(&NormSiteId::new(i, SiteKind::Ln2).to_string())?;
        known += block.mlp_norm.is_some() as usize;
    }
    model.lnf = norm_of("lnf")?;
    known += model.lnf.is_some() as usize;
    if known != header.norms.len() {
        return Err(Error::format(
            PREAMBLE as u64,
            "norm states name sites outside the model",
        ));
    }
    if tensors.contains_key("unembed_bias") {
        model.unembed_bias = Some(Tensor::zeros(&[config.vocab_size]));
    }

    let mut problem: Option<Error> = None;
    let mut used = 0;
    model.visit_params_mut(|name, slot| {
        if problem.is_some() {
            return;
        }
        match tensors.remove(name) {
            Some(t) if t.shape() == slot.shape() => {
                *slot = t;
                used += 1;
            }
            Some(t) => {
                let off = header.tensors[name].offset + payload_start as u64;
                problem = Some(Error::format(
                    off,
                    format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
                ));
            }
            None => {
                problem = Some(Error::format(
                    PREAMBLE as u64,
                    format!("missing tensor {name}"),
                ))
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if let Some(name) = tensors.keys().next() {
        let off = header.tensors[name].offset + payload_start as u64;
        return Err(Error::format(off, format!("unexpected tensor {name}")));
    }
    for site in model.sites() {
        model
            .norm_state(site)
            .expect("site exists")
            .validate()
            .map_err(|e| Error::format(PREAMBLE as u64, format!("{site}: {e}")))?;
    }
    Ok(model)
}
