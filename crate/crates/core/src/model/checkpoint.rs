//! Self-describing binary checkpoint.
//!
//! All integers little-endian:
//!
//! ```text
//! magic        8 bytes   "RNNTCKPT"
//! version      u32       1
//! config_len   u32       byte length of the JSON that follows
//! config       UTF-8     ModelConfig as JSON
//! vocab_len    u32       K
//! vocab        K × u32   Unicode scalar values, label ids 1..=K in order
//! n_tensors    u32
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   payload    prod(dims) × f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Tensors appear in [`ModelParams::tensors`] order.

use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::lattice::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RNNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

pub fn encode_checkpoint(config: &ModelConfig, vocab: &Vocab, params: &ModelParams) -> Result<Vec<u8>> {
    if vocab.len() != config.vocab_size {
        return Err(Error::config(format!(
            "vocabulary has {} symbols, model expects {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let json = serde_json::to_vec(config).map_err(|e| Error::config(e.to_string()))?;
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    put_u32(&mut out, vocab.len() as u32);
    for &c in vocab.symbols() {
        put_u32(&mut out, c as u32);
    }
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for t in &tensors {
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len() as u32);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::config("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::config(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::config(format!("checkpoint config: {e}")))?;
    config.validate()?;
    let k = r.u32()? as usize;
    let symbols = (0..k)
        .map(|_| {
            let v = r.u32()?;
            char::from_u32(v).ok_or_else(|| Error::config(format!("invalid codepoint {v:#x} in vocabulary")))
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::new(symbols)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::config(format!(
            "checkpoint vocabulary has {} symbols, its config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut params = ModelParams::zeros(&config)?;
    let n = r.u32()? as usize;
    let mut slots = params.tensors_mut();
    if n != slots.len() {
        return Err(Error::config(format!(
            "checkpoint has {n} tensors, configuration needs {}",
            slots.len()
        )));
    }
    for slot in slots.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::config("tensor name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != slot.name || shape != slot.shape {
            return Err(Error::config(format!(
                "tensor {name} {shape:?} does not match expected {} {:?}",
                slot.name, slot.shape
            )));
        }
        for v in slot.data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::config("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint { config, vocab, params })
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, vocab: &Vocab, params: &ModelParams) -> Result<()> {
    let bytes = encode_checkpoint(config, vocab, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::config("checkpoint is truncated")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
