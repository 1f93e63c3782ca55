//! Shared low-level helpers for the little-endian binary containers.

use crate::error::{Error, Result};
use crate::math::V3;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use std::path::Path;

pub fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

pub fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "file too short for magic"))?;
    if &buf != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&buf),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(r.read_u32::<LittleEndian>()?)
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(r.read_u64::<LittleEndian>()?)
}

pub fn write_f64_slice<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for &x in v {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn write_f32_slice<W: Write>(w: &mut W, v: &[f32]) -> Result<()> {
    for &x in v {
        w.write_f32::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_f32_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; n];
    r.read_f32_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn write_v3<W: Write>(w: &mut W, v: V3) -> Result<()> {
    write_f64_slice(w, &v)
}

pub fn read_v3<R: Read>(r: &mut R) -> Result<V3> {
    let v = read_f64_vec(r, 3)?;
    Ok([v[0], v[1], v[2]])
}

pub fn write_v3s<W: Write>(w: &mut W, vs: &[V3]) -> Result<()> {
    for &v in vs {
        write_v3(w, v)?;
    }
    Ok(())
}

pub fn read_v3s<R: Read>(r: &mut R, n: usize) -> Result<Vec<V3>> {
    (0..n).map(|_| read_v3(r)).collect()
}

/// Guards against absurd counts before allocating.
pub fn checked_len(n: u64, limit: u64, what: &str, path: &Path) -> Result<usize> {
    if n > limit {
        return Err(format_err(path, format!("{what} count {n} exceeds limit {limit}")));
    }
    Ok(n as usize)
}
