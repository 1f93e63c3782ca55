//! `PHM1` head-model container.
//!
//! Layout after the magic, little-endian:
//! u32 version (1), u32 nv, u32 nf, u32 d_alpha, u32 d_beta, u32 n_landmarks,
//! f64 vertices nv*3, u32 faces nf*3,
//! f64 shape basis d_alpha*nv*3, f64 expression basis d_beta*nv*3,
//! f64 skin weights nv*2 (neck, jaw), f64 joints 2*3,
//! landmarks n_landmarks * (u32 face, f64 bary*3), f64 bbox min/max.

use super::binfmt::*;
use crate::error::Result;
use crate::head::{HeadModel, LandmarkAnchor};
use crate::mesh::{Aabb, Mesh};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PHM1";
const MAX_COUNT: u64 = 1 << 28;

pub fn save_head_model(path: &Path, model: &HeadModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, MAGIC)?;
    write_u32(&mut w, 1)?;
    let nv = model.n_vertices();
    let nf = model.template.faces.len();
    write_u32(&mut w, nv as u32)?;
    write_u32(&mut w, nf as u32)?;
    write_u32(&mut w, model.d_alpha() as u32)?;
    write_u32(&mut w, model.d_beta() as u32)?;
    write_u32(&mut w, model.n_landmarks() as u32)?;
    write_v3s(&mut w, &model.template.vertices)?;
    for f in &model.template.faces {
        for &i in f {
            write_u32(&mut w, i)?;
        }
    }
    for basis in model.shape_basis.iter().chain(&model.expr_basis) {
        write_v3s(&mut w, basis)?;
    }
    for sw in &model.skin_weights {
        write_f64_slice(&mut w, sw)?;
    }
    write_v3(&mut w, model.joints[0])?;
    write_v3(&mut w, model.joints[1])?;
    for lm in &model.landmarks {
        write_u32(&mut w, lm.face)?;
        write_f64_slice(&mut w, &lm.barycentric)?;
    }
    write_v3(&mut w, model.bbox.min)?;
    write_v3(&mut w, model.bbox.max)?;
    w.flush()?;
    Ok(())
}

pub fn load_head_model(path: &Path) -> Result<HeadModel> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MAGIC, path)?;
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let nv = checked_len(read_u32(&mut r)? as u64, MAX_COUNT, "vertex", path)?;
    let nf = checked_len(read_u32(&mut r)? as u64, MAX_COUNT, "face", path)?;
    let d_alpha = checked_len(read_u32(&mut r)? as u64, 4096, "shape basis", path)?;
    let d_beta = checked_len(read_u32(&mut r)? as u64, 4096, "expression basis", path)?;
    let n_lm = checked_len(read_u32(&mut r)? as u64, 4096, "landmark", path)?;
    let vertices = read_v3s(&mut r, nv)?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let mut f = [0u32; 3];
        for v in f.iter_mut() {
            *v = read_u32(&mut r)?;
            if *v as usize >= nv {
                return Err(format_err(path, "face index out of range"));
            }
        }
        faces.push(f);
    }
    let read_basis = |r: &mut BufReader<File>, d: usize| -> Result<Vec<Vec<_>>> {
        (0..d).map(|_| read_v3s(r, nv)).collect()
    };
    let shape_basis = read_basis(&mut r, d_alpha)?;
    let expr_basis = read_basis(&mut r, d_beta)?;
    let mut skin_weights = Vec::with_capacity(nv);
    for _ in 0..nv {
        let v = read_f64_vec(&mut r, 2)?;
        skin_weights.push([v[0], v[1]]);
    }
    let joints = [read_v3(&mut r)?, read_v3(&mut r)?];
    let mut landmarks = Vec::with_capacity(n_lm);
    for _ in 0..n_lm {
        let face = read_u32(&mut r)?;
        if face as usize >= nf {
            return Err(format_err(path, "landmark face index out of range"));
        }
        let b = read_f64_vec(&mut r, 3)?;
        landmarks.push(LandmarkAnchor {
            face,
            barycentric: [b[0], b[1], b[2]],
        });
    }
    let bbox = Aabb {
        min: read_v3(&mut r)?,
        max: read_v3(&mut r)?,
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after model payload"));
    }
    let model = HeadModel {
        template: Mesh::new(vertices, faces),
        shape_basis,
        expr_basis,
        skin_weights,
        joints,
        landmarks,
        bbox,
    };
    model.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_template, ModelConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let model = build_template(&ModelConfig {
            subdivisions: 2,
            d_alpha: 3,
            d_beta: 2,
            seed: 1,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.phm");
        save_head_model(&p, &model).unwrap();
        let back = load_head_model(&p).unwrap();
        assert_eq!(back.template.vertices, model.template.vertices);
        assert_eq!(back.template.faces, model.template.faces);
        assert_eq!(back.shape_basis, model.shape_basis);
        assert_eq!(back.expr_basis, model.expr_basis);
        assert_eq!(back.skin_weights, model.skin_weights);
        assert_eq!(back.joints, model.joints);
        assert_eq!(back.landmarks, model.landmarks);
        assert_eq!(back.bbox, model.bbox);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.phm");
        std::fs::write(&p, b"NOPE and some other stuff").unwrap();
        assert!(load_head_model(&p).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let model = build_template(&ModelConfig {
            subdivisions: 1,
            d_alpha: 1,
            d_beta: 1,
            seed: 2,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.phm");
        save_head_model(&p, &model).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_head_model(&p).is_err());
    }
}
