//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `MMDF`, format version `u32`, the model
//! config (`n_layers, hidden, n_heads, vocab_size, max_positions, d_v, d_a`
//! as `u32`, then `dropout` as `f32`), then named tensors until end of file,
//! each as name length `u32`, name bytes, rank `u32`, dims `u32 × rank` and
//! `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMDF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Prefix separating optimizer/trainer state from model tensors.
pub const STATE_PREFIX: &str = "state.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl Checkpoint {
    pub fn from_params<F: Scalar>(params: &ModelParams<F>) -> Self {
        Self {
            config: params.config().clone(),
            tensors: params.iter().map(|(n, t)| (n.to_string(), t.cast())).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.n_layers, c.hidden, c.n_heads, c.vocab_size, c.max_positions, c.d_v, c.d_a] {
            put_u32(&mut out, v)?;
        }
        out.extend_from_slice(&c.dropout.to_le_bytes());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for d in t.shape() {
                put_u32(&mut out, *d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config = ModelConfig {
            n_layers: r.u32()?,
            hidden: r.u32()?,
            n_heads: r.u32()?,
            vocab_size: r.u32()?,
            max_positions: r.u32()?,
            d_v: r.u32()?,
            d_a: r.u32()?,
            dropout: r.f32()?,
        };
        let mut tensors = Vec::new();
        while !r.done() {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Model parameters, rejecting a checkpoint whose config differs from
    /// `expected`.
    pub fn params<F: Scalar>(&self, expected: Option<&ModelConfig>) -> Result<ModelParams<F>> {
        if let Some(cfg) = expected {
            if cfg != &self.config {
                return Err(Error::Config(format!(
                    "checkpoint config {:?} does not match expected {:?}",
                    self.config, cfg
                )));
            }
        }
        let named = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(STATE_PREFIX))
            .map(|(n, t)| (n.clone(), t.cast()))
            .collect();
        ModelParams::from_named(self.config.clone(), named)
    }
}
