//! `SMB1` sample-batch archives.
//!
//! One archive holds the training data for a set of posed heads. Layout
//! after the magic: u32 version (1), u32 d_alpha, u32 d_beta, u32 n_batches,
//! then per batch: f64 alpha, f64 beta, f64 theta[6],
//! u32 n_surface, per sample (f64 point*3, normal*3, canonical*3, bary*3,
//! u32 face), u32 n_volume, f64 points*3.

use super::binfmt::*;
use crate::error::Result;
use crate::head::ControlParams;
use crate::math::V3;
use crate::mesh::SurfaceSample;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SMB1";
const MAX_COUNT: u64 = 1 << 28;

/// Everything sampled from one posed head.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub params: ControlParams,
    pub surface: Vec<SurfaceSample>,
    pub volume: Vec<V3>,
}

pub fn save_sample_archive(path: &Path, batches: &[SampleBatch]) -> Result<()> {
    let (d_alpha, d_beta) = batches
        .first()
        .map(|b| (b.params.alpha.len(), b.params.beta.len()))
        .unwrap_or((0, 0));
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, MAGIC)?;
    write_u32(&mut w, 1)?;
    write_u32(&mut w, d_alpha as u32)?;
    write_u32(&mut w, d_beta as u32)?;
    write_u32(&mut w, batches.len() as u32)?;
    for b in batches {
        write_f64_slice(&mut w, &b.params.alpha)?;
        write_f64_slice(&mut w, &b.params.beta)?;
        write_f64_slice(&mut w, &b.params.theta)?;
        write_u32(&mut w, b.surface.len() as u32)?;
        for s in &b.surface {
            write_v3(&mut w, s.point)?;
            write_v3(&mut w, s.normal)?;
            write_v3(&mut w, s.canonical)?;
            write_f64_slice(&mut w, &s.barycentric)?;
            write_u32(&mut w, s.face as u32)?;
        }
        write_u32(&mut w, b.volume.len() as u32)?;
        write_v3s(&mut w, &b.volume)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_sample_archive(path: &Path) -> Result<Vec<SampleBatch>> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC, path)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let d_alpha = checked_len(read_u32(&mut r)? as u64, 4096, "shape dim", path)?;
    let d_beta = checked_len(read_u32(&mut r)? as u64, 4096, "expression dim", path)?;
    let n_batches = checked_len(read_u32(&mut r)? as u64, MAX_COUNT, "batch", path)?;
    let mut out = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let alpha = read_f64_vec(&mut r, d_alpha)?;
        let beta = read_f64_vec(&mut r, d_beta)?;
        let theta: [f64; 6] = read_f64_vec(&mut r, 6)?.try_into().unwrap();
        let params = ControlParams { alpha, beta, theta };
        if !params.is_finite() {
            return Err(format_err(path, "non-finite control parameters"));
        }
        let n_surf = checked_len(read_u32(&mut r)? as u64, MAX_COUNT, "surface sample", path)?;
        let mut surface = Vec::with_capacity(n_surf);
        for _ in 0..n_surf {
            let point = read_v3(&mut r)?;
            let normal = read_v3(&mut r)?;
            let canonical = read_v3(&mut r)?;
            let b = read_f64_vec(&mut r, 3)?;
            let face = read_u32(&mut r)? as usize;
            surface.push(SurfaceSample {
                point,
                normal,
                face,
                barycentric: [b[0], b[1], b[2]],
                canonical,
            });
        }
        let n_vol = checked_len(read_u32(&mut r)? as u64, MAX_COUNT, "volume sample", path)?;
        let volume = read_v3s(&mut r, n_vol)?;
        out.push(SampleBatch {
            params,
            surface,
            volume,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after archive payload"));
    }
    Ok(out)
}
