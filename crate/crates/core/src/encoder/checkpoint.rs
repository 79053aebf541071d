//! `HPDW` parameter checkpoints.
//!
//! Layout (little-endian): magic `HPDW`, format version `u32`, tensor count
//! `u32`, then per tensor: name length `u32`, UTF-8 name, rank `u32`, each
//! dimension `u32`, and the values as `f32`. The backbone configuration
//! travels as an extra tensor named `__config`.

use std::path::Path;

use crate::binio::{atomic_write, read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};

use super::{BagOfWords, BagOfWordsConfig, Backbone, EncoderConfig, ParamSet, Tensor, TransformerEncoder};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HPDW";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONFIG_TENSOR: &str = "__config";
const KIND_TRANSFORMER: f64 = 0.0;
const KIND_BOW: f64 = 1.0;

fn config_tensor(backbone: &Backbone) -> Tensor {
    let vals: Vec<f64> = match backbone {
        Backbone::Transformer(e) => {
            let c = e.config();
            vec![
                KIND_TRANSFORMER,
                c.vocab_size as f64,
                c.layers as f64,
                c.model_dim as f64,
                c.heads as f64,
                c.ffn_dim as f64,
                c.max_len as f64,
            ]
        }
        Backbone::BagOfWords(b) => {
            let c = b.config();
            vec![KIND_BOW, c.vocab_size as f64, c.dim as f64, c.max_len as f64]
        }
    };
    Tensor {
        name: CONFIG_TENSOR.into(),
        shape: vec![vals.len()],
        data: vals,
    }
}

pub fn encode_checkpoint(backbone: &Backbone) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let params = backbone.params();
    w.u32(params.len() as u32 + 1);
    let cfg = config_tensor(backbone);
    for t in std::iter::once(&cfg).chain(params.iter()) {
        w.u32(t.name.len() as u32);
        w.bytes(t.name.as_bytes());
        w.u32(t.shape.len() as u32);
        for d in &t.shape {
            w.u32(*d as u32);
        }
        w.f64s_as_f32(&t.data);
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Backbone> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().product();
        let data = r.f32s_as_f64(n)?;
        tensors.push(Tensor { name, shape, data });
    }
    r.finish()?;

    let cfg_pos = tensors
        .iter()
        .position(|t| t.name == CONFIG_TENSOR)
        .ok_or_else(|| Error::format(path, "checkpoint lacks a __config tensor"))?;
    let cfg = tensors.remove(cfg_pos).data;
    let as_count = |v: f64| v as usize;
    let params = ParamSet::new(tensors)?;
    let backbone = match cfg.first().copied() {
        Some(k) if k == KIND_TRANSFORMER && cfg.len() == 7 => {
            let config = EncoderConfig {
                vocab_size: as_count(cfg[1]),
                layers: as_count(cfg[2]),
                model_dim: as_count(cfg[3]),
                heads: as_count(cfg[4]),
                ffn_dim: as_count(cfg[5]),
                max_len: as_count(cfg[6]),
                seed: 0,
            };
            Backbone::Transformer(TransformerEncoder::from_params(config, params)?)
        }
        Some(k) if k == KIND_BOW && cfg.len() == 4 => {
            let config = BagOfWordsConfig {
                vocab_size: as_count(cfg[1]),
                dim: as_count(cfg[2]),
                max_len: as_count(cfg[3]),
                seed: 0,
            };
            Backbone::BagOfWords(BagOfWords::from_params(config, params)?)
        }
        _ => return Err(Error::format(path, "unrecognized backbone configuration")),
    };
    Ok(backbone)
}

pub fn save_backbone(backbone: &Backbone, path: &Path) -> Result<()> {
    atomic_write(path, &encode_checkpoint(backbone))
}

pub fn load_backbone(path: &Path) -> Result<Backbone> {
    decode_checkpoint(&read_file(path)?, path)
}
