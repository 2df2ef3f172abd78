//! Raw tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `IFTENSOR`                        |
//! | 8      | 4    | format version, currently 1             |
//! | 12     | 4    | element width in bytes (4 or 8)         |
//! | 16     | 4    | rank `r`                                |
//! | 20     | 4·r  | dimensions                              |
//! | ...    |      | IEEE-754 payload in row-major order     |
//!
//! Images use the `(H, W, C)` channel-fastest layout of [`crate::tensor`].

use std::fs;
use std::path::Path;

use crate::{Error, Real, Result, Tensor};

pub const RAW_MAGIC: &[u8; 8] = b"IFTENSOR";
pub const RAW_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    let width = std::mem::size_of::<Real>() as u32;
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], String> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format!("truncated at byte {}", *pos))?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32, String> {
    let b = take(bytes, pos, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes one tensor starting at `*pos` and advances `*pos` past it.
pub fn decode_tensor(bytes: &[u8], pos: &mut usize) -> Result<Tensor, String> {
    let magic = take(bytes, pos, 8)?;
    if magic != RAW_MAGIC {
        return Err("bad magic".into());
    }
    let version = take_u32(bytes, pos)?;
    if version != RAW_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let width = take_u32(bytes, pos)?;
    if width != 4 && width != 8 {
        return Err(format!("unsupported element width {width}"));
    }
    let rank = take_u32(bytes, pos)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(format!("unsupported rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(take_u32(bytes, pos)? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("dimension overflow")?;
    let payload = take(bytes, pos, count * width as usize)?;
    let data: Vec<Real> = if width == 8 {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect()
    };
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let t = decode_tensor(&bytes, &mut pos).map_err(|r| Error::format(path, r))?;
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after tensor"));
    }
    Ok(t)
}
