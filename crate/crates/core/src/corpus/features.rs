//! `.vaft` feature files: magic `VAFT`, version `u32`, `T` `u32`, `dim` `u32`,
//! then `T × dim` little-endian `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"VAFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "vaft";

/// A `T × (2·d_v + d_a)` sequence of per-segment feature rows, each the
/// concatenation `[rgb | flow | audio]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoAudioFeatures {
    rows: Tensor<f32>,
}

impl VideoAudioFeatures {
    pub fn new(rows: Tensor<f32>) -> Result<Self> {
        if rows.shape().len() != 2 {
            return Err(Error::Dimension(format!("feature rows must be 2-d, got {:?}", rows.shape())));
        }
        if rows.shape()[0] == 0 {
            return Err(Error::Dimension("feature sequence has zero segments".into()));
        }
        if rows.shape()[1] == 0 {
            return Err(Error::Dimension("feature rows have zero width".into()));
        }
        if !rows.is_finite() {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(Self { rows })
    }

    /// Concatenates per-stream blocks into `[rgb | flow | audio]` rows.
    pub fn from_streams(rgb: &Tensor<f32>, flow: &Tensor<f32>, audio: &Tensor<f32>) -> Result<Self> {
        let t = rgb.rows();
        if flow.rows() != t || audio.rows() != t {
            return Err(Error::Shape {
                op: "concatenate streams",
                lhs: rgb.shape().to_vec(),
                rhs: audio.shape().to_vec(),
            });
        }
        let dim = rgb.cols() + flow.cols() + audio.cols();
        let mut data = Vec::with_capacity(t * dim);
        for i in 0..t {
            data.extend_from_slice(rgb.row(i));
            data.extend_from_slice(flow.row(i));
            data.extend_from_slice(audio.row(i));
        }
        Self::new(Tensor::new(vec![t, dim], data)?)
    }

    pub fn segments(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        self.rows.row(t)
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.rows
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.rows.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.segments() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.rows.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a feature file, checking the row width against `expected_dim`
    /// when given.
    pub fn from_bytes(bytes: &[u8], expected_dim: Option<usize>) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Format("not a feature file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
        let version = word(4);
        if version != FEATURE_VERSION as usize {
            return Err(Error::Format(format!(
                "feature format version {version}, expected {FEATURE_VERSION}"
            )));
        }
        let (t, dim) = (word(8), word(12));
        if let Some(expected) = expected_dim {
            if dim != expected {
                return Err(Error::Dimension(format!(
                    "feature file has {dim}-dim rows, config expects {expected}"
                )));
            }
        }
        if bytes.len() != 16 + 4 * t * dim {
            return Err(Error::Format(format!(
                "feature payload is {} bytes, header declares {t}×{dim}",
                bytes.len() - 16
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(Tensor::new(vec![t, dim], data)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, expected_dim)
    }
}
