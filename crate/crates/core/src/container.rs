//! Binary model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "HVMODEL\0"
//! version  u32
//! kind     u32      ModelKind tag
//! ndims    u32
//! dims     ndims × u64
//! count    u64      number of payload values
//! payload  count × f64
//! ```
//!
//! Every model type flattens itself into a dimension header plus an `f64`
//! payload, so a save/load round trip is bit-exact.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HVMODEL\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ModelKind {
    Gmm = 1,
    GmmClassifier = 2,
    TotalVariability = 3,
    Pca = 4,
    Vae = 5,
    Svm = 6,
    FeatureMatrix = 7,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            1 => ModelKind::Gmm,
            2 => ModelKind::GmmClassifier,
            3 => ModelKind::TotalVariability,
            4 => ModelKind::Pca,
            5 => ModelKind::Vae,
            6 => ModelKind::Svm,
            7 => ModelKind::FeatureMatrix,
            _ => return None,
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ModelKind::Gmm => "gmm",
            ModelKind::GmmClassifier => "gmm-classifier",
            ModelKind::TotalVariability => "total-variability",
            ModelKind::Pca => "pca",
            ModelKind::Vae => "vae",
            ModelKind::Svm => "svm",
            ModelKind::FeatureMatrix => "feature-matrix",
        };
        f.write_str(name)
    }
}

/// A model that can be stored in the container.
pub trait ContainerModel: Sized {
    const KIND: ModelKind;

    fn dims(&self) -> Vec<u64>;

    fn payload(&self) -> Vec<f64>;

    /// Rebuilds the model; implementations must check `payload.len()`
    /// against what `dims` implies.
    fn from_parts(dims: &[u64], payload: Vec<f64>) -> Result<Self>;
}

/// Raw decoded container, before interpretation by a model type.
#[derive(Debug, Clone, PartialEq)]
pub struct RawContainer {
    pub kind: ModelKind,
    pub dims: Vec<u64>,
    pub payload: Vec<f64>,
}

pub fn encode<M: ContainerModel>(model: &M) -> Vec<u8> {
    let dims = model.dims();
    let payload = model.payload();
    let mut out = Vec::with_capacity(28 + 8 * dims.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(M::KIND as u32).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in &payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("container truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawContainer> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a model container (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::IncompatibleModel {
            expected: format!("container version {VERSION}"),
            found: format!("container version {version}"),
        });
    }
    let tag = cur.u32()?;
    let kind = ModelKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))?;
    let ndims = cur.u32()? as usize;
    let dims = (0..ndims).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
    let count = cur.u64()? as usize;
    let remaining = bytes.len() - cur.pos;
    if count.checked_mul(8) != Some(remaining) {
        return Err(Error::Format(format!(
            "payload declares {count} values but {remaining} bytes remain"
        )));
    }
    let payload = cur
        .take(remaining)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawContainer { kind, dims, payload })
}

pub fn decode<M: ContainerModel>(bytes: &[u8]) -> Result<M> {
    let raw = decode_raw(bytes)?;
    if raw.kind != M::KIND {
        return Err(Error::IncompatibleModel {
            expected: M::KIND.to_string(),
            found: raw.kind.to_string(),
        });
    }
    M::from_parts(&raw.dims, raw.payload)
}

pub fn save_model<M: ContainerModel>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_model<M: ContainerModel>(path: impl AsRef<Path>) -> Result<M> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(Error::at_path(path))
}

/// Reads only the kind tag of a stored model.
pub fn peek_kind(path: impl AsRef<Path>) -> Result<ModelKind> {
    Ok(decode_raw(&std::fs::read(path)?)?.kind)
}

/// Checks the header length and converts the dims to `usize`.
pub(crate) fn expect_dims(dims: &[u64], n: usize, what: &str) -> Result<Vec<usize>> {
    if dims.len() != n {
        return Err(Error::Format(format!(
            "{what}: expected {n} dimensions in header, found {}",
            dims.len()
        )));
    }
    dims.iter()
        .map(|&d| usize::try_from(d).map_err(|_| Error::Format(format!("{what}: dimension {d} too large"))))
        .collect()
}

pub(crate) fn expect_len(payload: &[f64], expected: usize, what: &str) -> Result<()> {
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{what}: payload has {} values, header implies {expected}",
            payload.len()
        )));
    }
    Ok(())
}

/// Sequential reader over a decoded payload.
pub(crate) struct PayloadReader {
    values: std::vec::IntoIter<f64>,
}

impl PayloadReader {
    pub(crate) fn new(payload: Vec<f64>) -> Self {
        Self {
            values: payload.into_iter(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Vec<f64> {
        self.values.by_ref().take(n).collect()
    }

    pub(crate) fn scalar(&mut self) -> f64 {
        self.values.next().unwrap_or(f64::NAN)
    }
}
