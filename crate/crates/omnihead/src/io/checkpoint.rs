//! `CKP1` checkpoints: a named-blob table.
//!
//! Layout after the magic: u32 version (1), u32 n_entries, then per entry
//! (sorted by name): u32 name length, utf-8 name, u8 dtype
//! (0 = f64, 1 = u64, 2 = f32, 3 = bytes), u64 element count, payload.
//! Higher-level code (warp field, feature planes, optimizer) stores its
//! state as typed entries; unknown entries are preserved on load so
//! checkpoints stay forward-compatible.

use super::binfmt::*;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CKP1";
const MAX_COUNT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Blob {
    F64(Vec<f64>),
    U64(Vec<u64>),
    F32(Vec<f32>),
    Bytes(Vec<u8>),
}

/// A checkpoint file in memory: named typed blobs, stable order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, Blob>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_f64(&mut self, name: &str, v: Vec<f64>) {
        self.entries.insert(name.into(), Blob::F64(v));
    }

    pub fn put_u64(&mut self, name: &str, v: Vec<u64>) {
        self.entries.insert(name.into(), Blob::U64(v));
    }

    pub fn put_f32(&mut self, name: &str, v: Vec<f32>) {
        self.entries.insert(name.into(), Blob::F32(v));
    }

    pub fn put_bytes(&mut self, name: &str, v: Vec<u8>) {
        self.entries.insert(name.into(), Blob::Bytes(v));
    }

    fn missing(name: &str) -> Error {
        Error::MissingArtifact(format!("checkpoint entry '{name}'"))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.entries.get(name) {
            Some(Blob::F64(v)) => Ok(v),
            Some(_) => Err(Error::Config(format!("entry '{name}' has wrong dtype"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.entries.get(name) {
            Some(Blob::U64(v)) => Ok(v),
            Some(_) => Err(Error::Config(format!("entry '{name}' has wrong dtype"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32]> {
        match self.entries.get(name) {
            Some(Blob::F32(v)) => Ok(v),
            Some(_) => Err(Error::Config(format!("entry '{name}' has wrong dtype"))),
            None => Err(Self::missing(name)),
        }
    }

    pub fn scalar_f64(&self, name: &str) -> Result<f64> {
        let v = self.f64s(name)?;
        if v.len() != 1 {
            return Err(Error::Config(format!("entry '{name}' is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn scalar_u64(&self, name: &str) -> Result<u64> {
        let v = self.u64s(name)?;
        if v.len() != 1 {
            return Err(Error::Config(format!("entry '{name}' is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_magic(&mut w, MAGIC)?;
        write_u32(&mut w, 1)?;
        write_u32(&mut w, self.entries.len() as u32)?;
        for (name, blob) in &self.entries {
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            match blob {
                Blob::F64(v) => {
                    w.write_all(&[0])?;
                    write_u64(&mut w, v.len() as u64)?;
                    write_f64_slice(&mut w, v)?;
                }
                Blob::U64(v) => {
                    w.write_all(&[1])?;
                    write_u64(&mut w, v.len() as u64)?;
                    for &x in v {
                        write_u64(&mut w, x)?;
                    }
                }
                Blob::F32(v) => {
                    w.write_all(&[2])?;
                    write_u64(&mut w, v.len() as u64)?;
                    write_f32_slice(&mut w, v)?;
                }
                Blob::Bytes(v) => {
                    w.write_all(&[3])?;
                    write_u64(&mut w, v.len() as u64)?;
                    w.write_all(v)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        check_magic(&mut r, MAGIC, path)?;
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let name_len = checked_len(read_u32(&mut r)? as u64, 4096, "name", path)?;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| format_err(path, "entry name is not utf-8"))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let count = checked_len(read_u64(&mut r)?, MAX_COUNT, "entry", path)?;
            let blob = match dtype[0] {
                0 => Blob::F64(read_f64_vec(&mut r, count)?),
                1 => {
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        v.push(read_u64(&mut r)?);
                    }
                    Blob::U64(v)
                }
                2 => Blob::F32(read_f32_vec(&mut r, count)?),
                3 => {
                    let mut v = vec![0u8; count];
                    r.read_exact(&mut v)?;
                    Blob::Bytes(v)
                }
                d => return Err(format_err(path, format!("unknown dtype {d}"))),
            };
            if entries.insert(name.clone(), blob).is_some() {
                return Err(format_err(path, format!("duplicate entry '{name}'")));
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(format_err(path, "trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_dtypes() {
        let mut ck = Checkpoint::new();
        ck.put_f64("weights", vec![1.5, -2.25, 1e-300]);
        ck.put_u64("shape", vec![3, 7, 9]);
        ck.put_f32("grid", vec![0.5, -0.125]);
        ck.put_bytes("meta", b"hello".to_vec());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckp");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn typed_accessors() {
        let mut ck = Checkpoint::new();
        ck.put_f64("lr", vec![0.01]);
        ck.put_u64("step", vec![42]);
        assert_eq!(ck.scalar_f64("lr").unwrap(), 0.01);
        assert_eq!(ck.scalar_u64("step").unwrap(), 42);
        assert!(ck.f64s("step").is_err());
        assert!(ck.f64s("absent").is_err());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let mut ck = Checkpoint::new();
        ck.put_f64("weights", vec![0.0; 64]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckp");
        ck.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
