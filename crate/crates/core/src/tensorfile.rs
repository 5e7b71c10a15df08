//! `FSAT` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FSAT" | version: u16 = 1 | dtype: u8 (0 = f32, 1 = f64) | rank: u8
//!        | dims: rank x u32 | payload: row-major values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FsaError, Result};
use crate::feature::FeatureMap;
use crate::linalg::Real;

const MAGIC: &[u8; 4] = b"FSAT";
const VERSION: u16 = 1;

/// Element data of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
        }
    }

    /// Values converted to `T`.
    pub fn to_vec<T: Real>(&self) -> Vec<T> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<u32>,
    data: TensorData,
}

fn format_err(msg: impl Into<String>) -> FsaError {
    FsaError::Format(msg.into())
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(format_err(format!("rank {} exceeds 255", dims.len())));
        }
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        if expected != Some(data.len()) {
            return Err(format_err(format!(
                "dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(TensorFile { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// A `C x H x W` map stored with the element type of `T`.
    pub fn from_feature_map<T: Real>(x: &FeatureMap<T>) -> Self {
        let (c, h, w) = x.dims();
        let data = match T::PRECISION {
            crate::linalg::Precision::F32 => TensorData::F32(x.as_slice().iter().map(|v| v.as_f64() as f32).collect()),
            crate::linalg::Precision::F64 => TensorData::F64(x.as_slice().iter().map(|v| v.as_f64()).collect()),
        };
        TensorFile {
            dims: vec![c as u32, h as u32, w as u32],
            data,
        }
    }

    /// Interprets a rank-3 tensor as `C x H x W`, or a rank-2 tensor as a
    /// single-channel `H x W` map.
    pub fn to_feature_map<T: Real>(&self) -> Result<FeatureMap<T>> {
        let (c, h, w) = match self.dims[..] {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            _ => {
                return Err(format_err(format!(
                    "expected a rank-2 or rank-3 tensor, got rank {}",
                    self.dims.len()
                )))
            }
        };
        FeatureMap::from_vec(c as usize, h as usize, w as usize, self.data.to_vec())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 4 * self.dims.len() + 8 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.data.dtype());
        buf.push(self.dims.len() as u8);
        for d in &self.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(format_err(format!("truncated file: missing {what}")));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4, "magic")? != MAGIC {
            return Err(format_err("bad magic, not an FSAT file"));
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let dtype = take(1, "dtype")?[0];
        let rank = take(1, "rank")?[0] as usize;
        let dims: Vec<u32> = take(4 * rank, "dims")?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| format_err("element count overflows"))?;
        let width = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(format_err(format!("unknown dtype {other}"))),
        };
        let payload = take(count.checked_mul(width).ok_or_else(|| format_err("payload too large"))?, "payload")?;
        let data = if dtype == 0 {
            TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        if !cur.is_empty() {
            return Err(format_err(format!("{} trailing bytes after payload", cur.len())));
        }
        TensorFile::new(dims, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
