//! Little-endian checkpoint container.
//!
//! ```text
//! "CTXLM1"  version:u32  count:u32
//! count x { name_len:u16 name  dtype:u8  rank:u8  dims:u64*rank  payload }
//! config_len:u32 config_text
//! vocab_len:u32 vocab_text
//! ```
//!
//! Arrays are written in order: model parameters, `adadelta.eg/<name>` and
//! `adadelta.edx/<name>` per parameter, then the `train.*` scalars as f64.

use std::collections::HashMap;
use std::path::Path;

use crate::config::{Precision, TrainConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{DenseMatrix, ParamStore, Real};

use super::{AdadeltaSlot, AdadeltaState};

pub const MAGIC: &[u8; 6] = b"CTXLM1";
pub const FORMAT_VERSION: u32 = 1;

const EG: &str = "adadelta.eg/";
const EDX: &str = "adadelta.edx/";
const META_EPOCH: &str = "train.epoch";
const META_BEST: &str = "train.best_valid_nll";
const META_STREAM: &str = "train.rng_stream";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<T>,
    pub optimizer: AdadeltaState<T>,
    /// Epoch the parameters come from; 0 before any training.
    pub epoch: usize,
    pub best_valid_nll: f64,
    /// Random stream to continue shuffling from.
    pub rng_stream: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(config: TrainConfig, vocab: Vocabulary, params: ParamStore<T>, optimizer: AdadeltaState<T>) -> Self {
        Self {
            config,
            vocab,
            params,
            optimizer,
            epoch: 0,
            best_valid_nll: f64::INFINITY,
            rng_stream: 0,
        }
    }

    /// Wraps an existing model with fresh optimizer state.
    pub fn from_model(config: TrainConfig, vocab: Vocabulary, model: &Model<T>) -> Self {
        let params = model.params().clone();
        let optimizer = AdadeltaState::new(&params);
        Self::new(config, vocab, params, optimizer)
    }

    pub fn model(&self) -> Result<Model<T>> {
        Model::from_params(self.config.model_spec(self.vocab.len()), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let count = self.params.len() * 3 + 3;
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, m) in self.params.iter() {
            write_matrix(&mut out, name, m);
        }
        for ((name, _), slot) in self.params.iter().zip(self.optimizer.slots()) {
            write_matrix(&mut out, &format!("{EG}{name}"), &slot.eg);
            write_matrix(&mut out, &format!("{EDX}{name}"), &slot.edx);
        }
        write_scalar(&mut out, META_EPOCH, self.epoch as f64);
        write_scalar(&mut out, META_BEST, self.best_valid_nll);
        write_scalar(&mut out, META_STREAM, self.rng_stream as f64);
        write_text(&mut out, &self.config.to_config_string());
        write_text(&mut out, &self.vocab.to_file_string());
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Decodes a checkpoint whose parameters have element type `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawCheckpoint::parse(bytes)?;
        if raw.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint holds dtype {}, expected {}",
                raw.dtype,
                T::NAME
            )));
        }
        raw.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// A checkpoint of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawCheckpoint::parse(bytes)?;
        match raw.dtype {
            1 => Ok(AnyCheckpoint::F32(raw.build()?)),
            2 => Ok(AnyCheckpoint::F64(raw.build()?)),
            d => Err(Error::Format(format!("unknown dtype code {d}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyCheckpoint::F32(c) => c.to_bytes(),
            AnyCheckpoint::F64(c) => c.to_bytes(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        match self {
            AnyCheckpoint::F32(c) => &c.config,
            AnyCheckpoint::F64(c) => &c.config,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            AnyCheckpoint::F32(c) => &c.vocab,
            AnyCheckpoint::F64(c) => &c.vocab,
        }
    }
}

fn write_header(out: &mut Vec<u8>, name: &str, dtype: u8, dims: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

fn write_matrix<T: Real>(out: &mut Vec<u8>, name: &str, m: &DenseMatrix<T>) {
    write_header(out, name, T::DTYPE, &[m.rows(), m.cols()]);
    for &x in m.as_slice() {
        x.write_le(out);
    }
}

fn write_scalar(out: &mut Vec<u8>, name: &str, x: f64) {
    write_header(out, name, f64::DTYPE, &[1]);
    out.extend_from_slice(&x.to_le_bytes());
}

fn write_text(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        std::str::from_utf8(self.take(len, what)?).map_err(|e| Error::Utf8 {
            offset: start + e.valid_up_to(),
        })
    }
}

struct RawArray<'a> {
    name: String,
    dtype: u8,
    dims: Vec<usize>,
    payload: &'a [u8],
}

impl RawArray<'_> {
    fn matrix<T: Real>(&self) -> Result<DenseMatrix<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "`{}` has dtype {}, expected {}",
                self.name,
                self.dtype,
                T::NAME
            )));
        }
        if self.dims.len() != 2 {
            return Err(Error::Format(format!(
                "`{}` has rank {}, expected 2",
                self.name,
                self.dims.len()
            )));
        }
        let data = self.payload.chunks_exact(T::width()).map(T::read_le).collect();
        DenseMatrix::from_vec(self.dims[0], self.dims[1], data)
    }

    fn scalar(&self) -> Result<f64> {
        if self.dtype != f64::DTYPE || self.dims != [1] {
            return Err(Error::Format(format!("`{}` must be a single f64", self.name)));
        }
        Ok(f64::read_le(self.payload))
    }
}

struct RawCheckpoint<'a> {
    arrays: Vec<RawArray<'a>>,
    /// Element type of the model parameters.
    dtype: u8,
    config: TrainConfig,
    vocab: Vocabulary,
}

impl<'a> RawCheckpoint<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = c.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let count = c.u32("array count")? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = c.u16("array name")? as usize;
            let start = c.pos;
            let name = std::str::from_utf8(c.take(name_len, "array name")?)
                .map_err(|e| Error::Utf8 {
                    offset: start + e.valid_up_to(),
                })?
                .to_string();
            let dtype = c.u8("dtype")?;
            let width = match dtype {
                1 => 4,
                2 => 8,
                d => return Err(Error::Format(format!("`{name}` has unknown dtype code {d}"))),
            };
            let rank = c.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(c.u64("dims")? as usize);
            }
            let len = dims
                .iter()
                .try_fold(width, |acc: usize, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
            let payload = c.take(len, &name)?;
            arrays.push(RawArray {
                name,
                dtype,
                dims,
                payload,
            });
        }
        let config = TrainConfig::parse(c.text("config")?)?;
        let vocab = Vocabulary::from_file_str(c.text("vocabulary")?)?;
        if c.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        let dtype = arrays
            .iter()
            .find(|a| is_param(&a.name))
            .map(|a| a.dtype)
            .ok_or_else(|| Error::Format("checkpoint has no parameters".into()))?;
        let expected = match config.precision {
            Precision::F32 => f32::DTYPE,
            Precision::F64 => f64::DTYPE,
        };
        if dtype != expected {
            return Err(Error::Format(format!(
                "config says {} but parameters have dtype {dtype}",
                config.precision
            )));
        }
        Ok(Self {
            arrays,
            dtype,
            config,
            vocab,
        })
    }

    fn build<T: Real>(self) -> Result<Checkpoint<T>> {
        let mut by_name: HashMap<&str, &RawArray<'_>> = HashMap::new();
        for a in &self.arrays {
            if by_name.insert(a.name.as_str(), a).is_some() {
                return Err(Error::Format(format!("duplicate array `{}`", a.name)));
            }
        }
        let mut params = ParamStore::new();
        let mut slots = Vec::new();
        for a in self.arrays.iter().filter(|a| is_param(&a.name)) {
            let value = a.matrix::<T>()?;
            let slot = AdadeltaSlot {
                eg: optimizer_array(&by_name, EG, &a.name)?,
                edx: optimizer_array(&by_name, EDX, &a.name)?,
            };
            if slot.eg.shape() != value.shape() || slot.edx.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "optimizer state of `{}` has the wrong shape",
                    a.name
                )));
            }
            params.add(a.name.clone(), value);
            slots.push(slot);
        }
        let known = params.len() * 3 + 3;
        if self.arrays.len() != known {
            return Err(Error::Format(format!(
                "{} arrays, expected {known} for {} parameters",
                self.arrays.len(),
                params.len()
            )));
        }
        let scalar = |name: &str| -> Result<f64> {
            by_name
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing `{name}`")))?
                .scalar()
        };
        let checkpoint = Checkpoint {
            config: self.config,
            vocab: self.vocab,
            params,
            optimizer: AdadeltaState::from_slots(slots),
            epoch: scalar(META_EPOCH)? as usize,
            best_valid_nll: scalar(META_BEST)?,
            rng_stream: scalar(META_STREAM)? as u64,
        };
        // validates names and shapes against the configured variant
        checkpoint.model()?;
        Ok(checkpoint)
    }
}

fn is_param(name: &str) -> bool {
    !name.starts_with("adadelta.") && !name.starts_with("train.")
}

fn optimizer_array<T: Real>(
    by_name: &HashMap<&str, &RawArray<'_>>,
    prefix: &str,
    param: &str,
) -> Result<DenseMatrix<T>> {
    let key = format!("{prefix}{param}");
    by_name
        .get(key.as_str())
        .ok_or_else(|| Error::Format(format!("missing `{key}`")))?
        .matrix()
}
