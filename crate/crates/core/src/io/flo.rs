//! Middlebury `.flo` files: the float `202021.25` (bytes `PIEH`), width and
//! height as 32-bit integers, then row-major interleaved `(u, v)` floats,
//! all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{FlowField, Resolution};
use crate::tensor::Tensor;

pub const MAGIC: f32 = 202021.25;
const HEADER: usize = 12;

/// Serializes the first batch item of a flow field.
pub fn encode(flow: &FlowField) -> Result<Vec<u8>> {
    if flow.batch() != 1 {
        return Err(Error::InvalidArgument(format!(".flo holds one field, got batch {}", flow.batch())));
    }
    let (h, w) = (flow.height(), flow.width());
    let d = flow.tensor().data();
    let mut out = Vec::with_capacity(HEADER + 8 * h * w);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for p in 0..h * w {
        out.extend_from_slice(&d[p].to_le_bytes());
        out.extend_from_slice(&d[h * w + p].to_le_bytes());
    }
    Ok(out)
}

/// Parses `.flo` bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let fail = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER {
        return Err(fail(format!("not a .flo file: {} bytes is shorter than the header", bytes.len())));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).expect("4-byte slice");
    let magic = f32::from_le_bytes(word(0));
    if magic != MAGIC {
        return Err(fail(format!("not a .flo file (magic {magic})")));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(fail(format!("invalid dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 8 * w * h;
    let found = bytes.len() - HEADER;
    if found != expected {
        let what = if found < expected { "truncated" } else { "trailing data" };
        return Err(fail(format!("{what}: expected {expected} bytes of flow data for {w}x{h}, found {found}")));
    }
    let mut data = vec![0.0f32; 2 * w * h];
    for p in 0..w * h {
        data[p] = f32::from_le_bytes(word(HEADER + 8 * p));
        data[w * h + p] = f32::from_le_bytes(word(HEADER + 8 * p + 4));
    }
    FlowField::new(Tensor::new(data, &[1, 2, h, w])?, Resolution::Full)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode(&fs::read(path)?, path)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    fs::write(path, encode(flow)?)?;
    Ok(())
}
