//! `SPKW` named-tensor archive.
//!
//! Layout (little-endian): `SPKW`, version `u32`, entry count `u32`; then per
//! entry: name length `u32`, UTF-8 name, rank `u32`, `rank` dimensions as
//! `u32`, and the elements as `f32`.

use super::tensor::{Scalar, Tensor};
use super::NumError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SPKW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub entries: Vec<(String, Tensor<f32>)>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.entries.push((name.into(), tensor.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<f32>, NumError> {
        self.get(name)
            .ok_or_else(|| NumError::Archive(format!("missing tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(NumError::Archive("bad magic, expected SPKW".into()));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(NumError::Archive(format!("unsupported SPKW version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| NumError::Archive("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.at != bytes.len() {
            return Err(NumError::Archive("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NumError::Archive("truncated SPKW archive".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
