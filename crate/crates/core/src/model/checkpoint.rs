//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "EMMIXCKP"
//! version   u32 LE
//! header    u64 LE length, then UTF-8 JSON (configs, subjects, tensor table)
//! payload   f64 LE: every parameter in table order, then every batch-norm
//!           running mean and variance
//! ```
//!
//! The payload is raw little-endian so values survive bit-for-bit, and the
//! header holds no timestamps so identical models give identical files.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmMixformer, EpochLog, ModelConfig, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::preprocess::PreprocessConfig;
use crate::tensor::RunningStats;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMMIXCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Everything in a checkpoint except the numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub subjects: Vec<String>,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub log: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
    norm_channels: Vec<usize>,
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(tm: &TrainedModel) -> Result<Vec<u8>> {
    let params = tm.model.parameters();
    let stats = tm.model.running_stats();
    let header = Checkpoint {
        model: tm.model.config.clone(),
        subjects: tm.subjects.clone(),
        preprocess: tm.preprocess,
        train: tm.train_config,
        log: tm.log.clone(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        norm_channels: stats.iter().map(|s| s.mean.len()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &params {
        write_f64s(&mut out, &t.data());
    }
    for s in &stats {
        write_f64s(&mut out, &s.mean);
        write_f64s(&mut out, &s.var);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let header: Checkpoint = serde_json::from_slice(cur.take(hlen as usize)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    // The architecture is rebuilt from the config; the weights drawn here are
    // all overwritten below.
    let model = EmMixformer::new(&mut ChaCha8Rng::seed_from_u64(0), &header.model)
        .map_err(|e| Error::Checkpoint(format!("bad model config: {e}")))?;
    let params = model.parameters();
    if params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            params.len(),
            header.tensors.len()
        )));
    }
    for ((name, t), entry) in params.iter().zip(&header.tensors) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match {} {:?}",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
        t.set_data(cur.f64s(t.numel())?)?;
    }
    let mut stats = Vec::with_capacity(header.norm_channels.len());
    for &c in &header.norm_channels {
        let mean = cur.f64s(c)?;
        let var = cur.f64s(c)?;
        stats.push(RunningStats { mean, var });
    }
    model.set_running_stats(&stats)?;
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(TrainedModel {
        model,
        subjects: header.subjects,
        preprocess: header.preprocess,
        train_config: header.train,
        log: header.log,
    })
}

pub fn save_checkpoint(tm: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(tm)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
