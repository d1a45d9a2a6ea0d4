//! Binary container for named `f32` tensors.
//!
//! Layout, little-endian: magic `HMAW`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` rank, `u32` dims and
//! the `f32` payload. Entries are written in sorted name order, so saving
//! the same store twice yields identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HmaFlow, ModelConfig, CONFIG_PARAM};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HMAW";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * store.numel() + 64 * store.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.fail(format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(r.fail("not a weights file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported weights version {version} (this build reads {VERSION})")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.fail("dimension overflow"))?;
        let payload = r.take(n.checked_mul(4).ok_or_else(|| r.fail("dimension overflow"))?)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(data, &dims).map_err(|e| r.fail(format!("`{name}`: {e}")))?;
        if store.insert(name.clone(), t).is_some() {
            return Err(r.fail(format!("duplicate parameter `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_weights(path: impl AsRef<Path>, store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    decode(&fs::read(path)?, path)
}

/// Saves parameters together with the architecture they belong to.
pub fn save_model(path: impl AsRef<Path>, model: &HmaFlow, params: &ParamStore<f32>) -> Result<()> {
    model.validate(params)?;
    let mut store = params.clone();
    store.insert(CONFIG_PARAM, model.config().to_tensor());
    save_weights(path, &store)
}

/// Loads a file written by [`save_model`] and checks it against the
/// architecture it declares.
pub fn load_model(path: impl AsRef<Path>) -> Result<(HmaFlow, ParamStore<f32>)> {
    let path = path.as_ref();
    let mut store = load_weights(path)?;
    let config = match store.remove(CONFIG_PARAM) {
        Some(t) => ModelConfig::from_tensor(&t)?,
        None => ModelConfig::default(),
    };
    let model = HmaFlow::new(config)?;
    model.validate(&store).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut s = ParamStore::new();
        s.insert("b.w", Tensor::new(vec![1.5f32, -0.0, f32::MIN_POSITIVE], &[3, 1]).unwrap());
        s.insert("a", Tensor::scalar(7.0f32));
        let bytes = encode(&s);
        let back = decode(&bytes, Path::new("w")).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.get("b.w").unwrap().shape(), &[3, 1]);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode(&ParamStore::new());
        bytes[4] = 9;
        let err = decode(&bytes, Path::new("w")).unwrap_err();
        assert!(err.to_string().contains("unsupported weights version 9"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::<f32>::zeros(&[4]));
        let bytes = encode(&s);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("w")).is_err());
    }
}
