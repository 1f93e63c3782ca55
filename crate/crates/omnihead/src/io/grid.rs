//! `SDG1` signed-distance grid container.
//!
//! Layout after the magic: u32 version (1), u32 dims[3], f64 bbox min/max,
//! f32 node values in x-fastest order.

use super::binfmt::*;
use crate::error::Result;
use crate::mesh::{Aabb, SdfGrid};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SDG1";

pub fn save_sdf_grid(path: &Path, grid: &SdfGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, MAGIC)?;
    write_u32(&mut w, 1)?;
    for &d in &grid.dims {
        write_u32(&mut w, d as u32)?;
    }
    write_v3(&mut w, grid.bbox.min)?;
    write_v3(&mut w, grid.bbox.max)?;
    write_f32_slice(&mut w, &grid.values)?;
    w.flush()?;
    Ok(())
}

pub fn load_sdf_grid(path: &Path) -> Result<SdfGrid> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC, path)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = checked_len(read_u32(&mut r)? as u64, 4096, "grid dim", path)?;
        if *d < 2 {
            return Err(format_err(path, "grid needs at least 2 nodes per axis"));
        }
    }
    let bbox = Aabb {
        min: read_v3(&mut r)?,
        max: read_v3(&mut r)?,
    };
    for a in 0..3 {
        if !(bbox.min[a] < bbox.max[a]) {
            return Err(format_err(path, "degenerate grid bbox"));
        }
    }
    let n = dims[0] * dims[1] * dims[2];
    let values = read_f32_vec(&mut r, n)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after grid payload"));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(format_err(path, "non-finite grid values"));
    }
    Ok(SdfGrid { dims, bbox, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{bake_sdf_grid, unit_tetrahedron};

    #[test]
    fn round_trip_is_bit_exact() {
        let m = unit_tetrahedron();
        let grid = bake_sdf_grid(&m, m.bbox().padded(0.5), 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.sdg");
        save_sdf_grid(&p, &grid).unwrap();
        let back = load_sdf_grid(&p).unwrap();
        assert_eq!(back.dims, grid.dims);
        assert_eq!(back.bbox, grid.bbox);
        assert_eq!(back.values, grid.values);
    }

    #[test]
    fn corrupt_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.sdg");
        std::fs::write(&p, b"SDG1\x01\x00\x00\x00").unwrap();
        assert!(load_sdf_grid(&p).is_err());
    }
}
