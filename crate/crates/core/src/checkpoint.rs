//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "INVDNCKP"
//! version      u32
//! config       u32 byte length, then UTF-8 `key=value` lines
//! iteration    u64
//! seed         u64
//! index        u32 count, then per tensor:
//!                u16 name length, name, u8 rank, u32 dims[rank],
//!                u64 offset, u64 length   (in f32 elements)
//! optimizer    u8 flag; if 1: f32 beta1, f32 beta2, u64 step
//! payload      u64 element count, then f32 values: parameters, followed
//!              by the Adam first and second moments when present
//! checksum     u32 CRC-32 of every preceding byte
//! ```

use std::path::{Path, PathBuf};

use crate::config::{model_config_from_text, model_config_text, model_key_value, MODEL_KEYS};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{InvDnModel, ModelConfig};
use crate::training::AdamState;

pub const MAGIC: &[u8; 8] = b"INVDNCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub iteration: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_model(model: &InvDnModel, adam: Option<&AdamState>, iteration: u64, seed: u64) -> Self {
        let tensors = model
            .parameters()
            .into_iter()
            .map(|(name, t)| TensorEntry { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        Self {
            version: FORMAT_VERSION,
            config: model.config().clone(),
            iteration,
            seed,
            tensors,
            adam: adam.cloned(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        let cfg = model_config_text(&self.config);
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&self.iteration.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.push(t.shape.len() as u8);
            for &d in &t.shape {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            b.extend_from_slice(&offset.to_le_bytes());
            b.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            offset += t.data.len() as u64;
        }
        match &self.adam {
            Some(a) => {
                b.push(1);
                b.extend_from_slice(&a.beta1.to_le_bytes());
                b.extend_from_slice(&a.beta2.to_le_bytes());
                b.extend_from_slice(&a.step.to_le_bytes());
            }
            None => b.push(0),
        }
        let moments = self.adam.as_ref().map_or(0, |_| 2);
        b.extend_from_slice(&(offset * (1 + moments)).to_le_bytes());
        let mut put = |vals: &[f32]| vals.iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
        self.tensors.iter().for_each(|t| put(&t.data));
        if let Some(a) = &self.adam {
            a.m.iter().for_each(|m| put(m));
            a.v.iter().for_each(|v| put(v));
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    /// Parse a container; `path` is only used for error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(r.err("not a checkpoint file (bad magic)"));
        }
        r.pos = MAGIC.len();
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.err(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
        }
        if bytes.len() < r.pos + 4 {
            return Err(r.err("file is truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(r.err("checksum mismatch (file is truncated or corrupt)"));
        }
        r.bytes = body;

        let cfg_len = r.u32()? as usize;
        let cfg_text = String::from_utf8(r.take(cfg_len)?.to_vec()).map_err(|_| r.err("config block is not UTF-8"))?;
        let config = model_config_from_text(&cfg_text).map_err(|e| r.err(format!("invalid config block: {e}")))?;
        let iteration = r.u64()?;
        let seed = r.u64()?;

        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count.min(1 << 16));
        let mut expected_offset = 0u64;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.err("tensor name is not UTF-8"))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (offset, len) = (r.u64()?, r.u64()?);
            let numel: usize = shape.iter().product();
            if offset != expected_offset || len != numel as u64 {
                return Err(r.err(format!("corrupt index entry for `{name}`")));
            }
            expected_offset += len;
            index.push((name, shape));
        }
        let adam_hdr = match r.u8()? {
            0 => None,
            1 => Some((r.f32()?, r.f32()?, r.u64()?)),
            f => return Err(r.err(format!("invalid optimizer flag {f}"))),
        };
        let total = r.u64()?;
        let copies = if adam_hdr.is_some() { 3 } else { 1 };
        if total != expected_offset * copies {
            return Err(r.err("payload length does not match the index"));
        }
        if (r.bytes.len() - r.pos) as u64 != total * 4 {
            return Err(r.err("payload size does not match its declared length"));
        }
        let read_set = |r: &mut Reader| -> Result<Vec<Vec<f32>>> {
            index
                .iter()
                .map(|(_, shape)| r.f32s(shape.iter().product()))
                .collect()
        };
        let params = read_set(&mut r)?;
        let adam = match adam_hdr {
            Some((beta1, beta2, step)) => {
                let m = read_set(&mut r)?;
                let v = read_set(&mut r)?;
                Some(AdamState { beta1, beta2, step, m, v })
            }
            None => None,
        };
        let tensors = index
            .into_iter()
            .zip(params)
            .map(|((name, shape), data)| TensorEntry { name, shape, data })
            .collect();
        Ok(Self { version, config, iteration, seed, tensors, adam })
    }

    /// Build the model described by this checkpoint, checking every tensor
    /// name and shape against the configuration.
    pub fn into_model(self, path: &Path) -> Result<(InvDnModel, Option<AdamState>)> {
        let mut model = InvDnModel::new(self.config.clone(), 0)?;
        let expected = model.parameters();
        let cerr = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        if expected.len() != self.tensors.len() {
            return Err(cerr(format!(
                "{} tensors stored, configuration needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, t), e) in expected.iter().zip(&self.tensors) {
            if *name != e.name || t.shape() != e.shape.as_slice() {
                return Err(cerr(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
        }
        model.load_parameters(self.tensors.into_iter().map(|t| t.data).collect())?;
        Ok((model, self.adam))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint { path: self.path.to_path_buf(), msg: msg.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

/// Atomically write a checkpoint.
pub fn save_checkpoint(
    model: &InvDnModel,
    adam: Option<&AdamState>,
    iteration: u64,
    seed: u64,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &Checkpoint::from_model(model, adam, iteration, seed).encode())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, path)
}

/// Model, optimizer state and iteration stored at `path`.
pub fn load_checkpoint(path: &Path) -> Result<(InvDnModel, Option<AdamState>, u64)> {
    let ck = read_checkpoint(path)?;
    let iteration = ck.iteration;
    let (model, adam) = ck.into_model(path)?;
    Ok((model, adam, iteration))
}

/// Like [`load_checkpoint`], but the stored configuration must equal
/// `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<(InvDnModel, Option<AdamState>, u64)> {
    let ck = read_checkpoint(path)?;
    let diffs: Vec<String> = MODEL_KEYS
        .iter()
        .filter_map(|k| {
            let (a, b) = (model_key_value(&ck.config, k)?, model_key_value(expected, k)?);
            (a != b).then(|| format!("{k}: checkpoint {a}, configured {b}"))
        })
        .collect();
    if !diffs.is_empty() {
        return Err(Error::ConfigMismatch(diffs.join("; ")));
    }
    let iteration = ck.iteration;
    let (model, adam) = ck.into_model(path)?;
    Ok((model, adam, iteration))
}

/// Checkpoint file name for an iteration inside a run directory.
pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("iter_{iteration:08}.ckpt"))
}
