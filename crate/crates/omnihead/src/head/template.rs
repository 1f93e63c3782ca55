//! Procedural head template generation.
//!
//! A subdivided icosphere deformed to a head-like ellipsoid (with nose and
//! chin bulges), smooth low-frequency orthogonalized displacement bases, and
//! smooth-falloff skinning weights for the neck and jaw joints. Everything is
//! deterministic for a given seed. The coordinate frame is +y up, +z out of
//! the face, units in meters.

use super::{HeadModel, LandmarkAnchor};
use crate::error::{Error, Result};
use crate::math::{self, V3};
use crate::mesh::{Bvh, Mesh};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_alpha: usize,
    pub d_beta: usize,
    /// Icosphere subdivision level; level 4 gives 2562 vertices / 5120 faces.
    pub subdivisions: u32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_alpha: 10,
            d_beta: 10,
            subdivisions: 4,
            seed: 7,
        }
    }
}

/// Ellipsoid semi-axes of the base head shape, meters.
const HEAD_AXES: V3 = [0.080, 0.105, 0.090];
/// Joint rest positions: neck near the bottom, jaw hinge behind the mouth.
const NECK_JOINT: V3 = [0.0, -0.095, -0.005];
const JAW_JOINT: V3 = [0.0, -0.015, 0.015];
/// Per-unit-coefficient RMS vertex displacement of each basis vector, meters.
const BASIS_RMS: f64 = 0.0035;

pub fn build_template(config: &ModelConfig) -> Result<HeadModel> {
    if config.subdivisions < 1 {
        return Err(Error::Config(
            "subdivisions must be >= 1 for a usable template".into(),
        ));
    }
    if config.subdivisions > 6 {
        return Err(Error::Config("subdivisions > 6 exceeds desk scale".into()));
    }
    let sphere = icosphere(config.subdivisions);
    let template = deform_to_head(&sphere);
    template.check_watertight()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape_basis = make_basis(&template, config.d_alpha, &mut rng, None);
    // Expressions are localized to the face by a frontal mask.
    let expr_basis = make_basis(&template, config.d_beta, &mut rng, Some(face_mask));
    let skin_weights = skinning_weights(&template);
    let landmarks = landmark_anchors(&template)?;
    let bbox = template.bbox();

    let model = HeadModel {
        template,
        shape_basis,
        expr_basis,
        skin_weights,
        joints: [NECK_JOINT, JAW_JOINT],
        landmarks,
        bbox,
    };
    model.validate()?;
    Ok(model)
}

/// Unit icosphere by repeated 1-to-4 subdivision of an icosahedron.
pub fn icosphere(level: u32) -> Mesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let verts: Vec<V3> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(math::normalize)
    .collect();
    let faces: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let mut mesh = Mesh::new(verts, faces);
    for _ in 0..level {
        mesh = subdivide(&mesh);
    }
    mesh
}

fn subdivide(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<V3>| -> u32 {
        let key = if a < b { (a, b) } else { (b, a) };
        *midpoints.entry(key).or_insert_with(|| {
            let m = math::normalize(math::lerp(
                vertices[a as usize],
                vertices[b as usize],
                0.5,
            ));
            vertices.push(m);
            (vertices.len() - 1) as u32
        })
    };
    for &[a, b, c] in &mesh.faces {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        faces.push([a, ab, ca]);
        faces.push([b, bc, ab]);
        faces.push([c, ca, bc]);
        faces.push([ab, bc, ca]);
    }
    Mesh::new(vertices, faces)
}

/// Smooth radial bump centered on unit direction `center`.
fn bump(dir: V3, center: V3, width: f64) -> f64 {
    let d2 = math::norm_sq(math::sub(dir, math::normalize(center)));
    (-d2 / (2.0 * width * width)).exp()
}

fn deform_to_head(sphere: &Mesh) -> Mesh {
    let vertices = sphere
        .vertices
        .iter()
        .map(|&u| {
            let mut p = [u[0] * HEAD_AXES[0], u[1] * HEAD_AXES[1], u[2] * HEAD_AXES[2]];
            // Nose, chin and brow bulges; flattened back of the head.
            let nose = bump(u, [0.0, -0.12, 1.0], 0.22);
            let chin = bump(u, [0.0, -0.75, 0.62], 0.30);
            let brow = bump(u, [0.0, 0.35, 0.92], 0.45);
            let r = 0.014 * nose + 0.008 * chin + 0.004 * brow;
            p = math::add(p, math::scale(u, r));
            if u[2] < 0.0 {
                p[2] *= 0.92; // flatter occiput
            }
            p
        })
        .collect();
    Mesh::new(vertices, sphere.faces.clone())
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Frontal mask confining the expression basis to the face region.
fn face_mask(p: V3) -> f64 {
    smoothstep((p[2] - 0.005) / 0.035) * smoothstep((0.065 - p[1]) / 0.03)
}

fn make_basis(
    template: &Mesh,
    count: usize,
    rng: &mut ChaCha8Rng,
    mask: Option<fn(V3) -> f64>,
) -> Vec<Vec<V3>> {
    let nv = template.vertices.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        // Low-frequency trigonometric displacement field.
        let mut field = vec![0.0f64; nv * 3];
        for axis in 0..3 {
            let freq: V3 = [
                rng.gen_range(3.0..8.0),
                rng.gen_range(3.0..8.0),
                rng.gen_range(3.0..8.0),
            ];
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.5..1.0);
            for (vi, &p) in template.vertices.iter().enumerate() {
                let arg = math::dot(freq, p) * std::f64::consts::PI + phase;
                let m = mask.map_or(1.0, |f| f(p));
                field[vi * 3 + axis] = amp * arg.sin() * m;
            }
        }
        // Gram-Schmidt against earlier vectors.
        for prev in &basis {
            let proj: f64 = field.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (f, p) in field.iter_mut().zip(prev) {
                *f -= proj * p;
            }
        }
        let norm: f64 = field.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            // Degenerate draw (mask may annihilate a field); redraw.
            continue;
        }
        for f in &mut field {
            *f /= norm;
        }
        basis.push(field);
    }
    // Scale to a fixed RMS per-vertex displacement and reshape.
    let scale = BASIS_RMS * (nv as f64).sqrt();
    basis
        .into_iter()
        .map(|field| {
            (0..nv)
                .map(|vi| {
                    [
                        field[vi * 3] * scale,
                        field[vi * 3 + 1] * scale,
                        field[vi * 3 + 2] * scale,
                    ]
                })
                .collect()
        })
        .collect()
}

fn skinning_weights(template: &Mesh) -> Vec<[f64; 2]> {
    template
        .vertices
        .iter()
        .map(|&p| {
            // Everything above the very bottom follows the neck; a residual
            // root weight remains at the base of the mesh.
            let w_neck_total = smoothstep((p[1] - (NECK_JOINT[1] - 0.012)) / 0.02);
            // Jaw: lower-front wedge with smooth falloff, strictly inside the
            // neck-weighted region.
            let w_jaw_raw = smoothstep((JAW_JOINT[1] + 0.005 - p[1]) / 0.03)
                * smoothstep((p[2] - (JAW_JOINT[2] - 0.02)) / 0.03);
            let w_jaw = w_jaw_raw * w_neck_total;
            [w_neck_total - w_jaw, w_jaw]
        })
        .collect()
}

/// Fixed landmark set: rays from the centroid toward named facial features.
fn landmark_anchors(template: &Mesh) -> Result<Vec<LandmarkAnchor>> {
    let dirs: [V3; 24] = [
        [0.0, -0.12, 1.0],   // nose tip
        [0.0, 0.15, 1.0],    // nose bridge
        [0.12, -0.20, 0.95], // right nostril
        [-0.12, -0.20, 0.95],
        [0.30, 0.25, 0.85], // eye centers
        [-0.30, 0.25, 0.85],
        [0.16, 0.25, 0.92], // inner eye corners
        [-0.16, 0.25, 0.92],
        [0.48, 0.25, 0.72], // outer eye corners
        [-0.48, 0.25, 0.72],
        [0.30, 0.48, 0.80], // brows
        [-0.30, 0.48, 0.80],
        [0.28, -0.38, 0.82], // mouth corners
        [-0.28, -0.38, 0.82],
        [0.0, -0.30, 0.97], // upper lip
        [0.0, -0.48, 0.90], // lower lip
        [0.0, -0.78, 0.60], // chin
        [0.55, -0.52, 0.48], // jawline
        [-0.55, -0.52, 0.48],
        [0.75, -0.25, 0.42],
        [-0.75, -0.25, 0.42],
        [0.88, 0.05, 0.28],
        [-0.88, 0.05, 0.28],
        [0.0, 0.62, 0.78], // forehead
    ];
    let bvh = Bvh::build(template);
    let centroid = template.centroid();
    dirs.iter()
        .map(|&d| {
            let dir = math::normalize(d);
            let (_, face, bary) = bvh
                .ray_intersect(template, centroid, dir, 0.0)
                .ok_or_else(|| Error::Config("landmark ray missed template".into()))?;
            Ok(LandmarkAnchor {
                face: face as u32,
                barycentric: bary,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_follow_euler() {
        // V = 10 * 4^n + 2, F = 20 * 4^n.
        for level in 1..=4u32 {
            let m = icosphere(level);
            let pow = 4usize.pow(level);
            assert_eq!(m.vertices.len(), 10 * pow + 2);
            assert_eq!(m.faces.len(), 20 * pow);
            m.check_watertight().unwrap();
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig {
            subdivisions: 2,
            ..ModelConfig::default()
        };
        let a = build_template(&cfg).unwrap();
        let b = build_template(&cfg).unwrap();
        assert_eq!(a.template.vertices, b.template.vertices);
        assert_eq!(a.shape_basis, b.shape_basis);
        assert_eq!(a.expr_basis, b.expr_basis);
        assert_eq!(a.landmarks, b.landmarks);
    }

    #[test]
    fn level4_head_dimensions() {
        let cfg = ModelConfig::default();
        let m = build_template(&cfg).unwrap();
        assert_eq!(m.n_vertices(), 2562);
        assert_eq!(m.template.faces.len(), 5120);
        assert_eq!(m.d_alpha(), 10);
        assert_eq!(m.d_beta(), 10);
        assert_eq!(m.n_landmarks(), 24);
    }

    #[test]
    fn zero_dims_are_valid() {
        let cfg = ModelConfig {
            d_alpha: 0,
            d_beta: 0,
            subdivisions: 2,
            seed: 1,
        };
        let m = build_template(&cfg).unwrap();
        assert!(m.shape_basis.is_empty());
        assert!(m.expr_basis.is_empty());
    }

    #[test]
    fn invalid_subdivision_rejected() {
        let cfg = ModelConfig {
            subdivisions: 0,
            ..ModelConfig::default()
        };
        assert!(build_template(&cfg).is_err());
    }

    #[test]
    fn bases_are_orthonormal() {
        let cfg = ModelConfig {
            subdivisions: 3,
            ..ModelConfig::default()
        };
        let m = build_template(&cfg).unwrap();
        let flat = |b: &Vec<V3>| -> Vec<f64> { b.iter().flatten().copied().collect() };
        for (i, a) in m.shape_basis.iter().enumerate() {
            for (j, b) in m.shape_basis.iter().enumerate() {
                let d: f64 = flat(a).iter().zip(flat(b)).map(|(x, y)| x * y).sum();
                let expected = if i == j {
                    BASIS_RMS * BASIS_RMS * m.n_vertices() as f64
                } else {
                    0.0
                };
                approx::assert_abs_diff_eq!(d, expected, epsilon = 1e-10);
            }
        }
    }
}
