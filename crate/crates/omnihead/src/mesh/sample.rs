//! Surface and volume sampling with ground-truth canonical correspondences.

use super::{Aabb, Bvh, Mesh};
use crate::error::{Error, Result};
use crate::math::{self, V3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An on-surface training sample: point, outward normal and its ground-truth
/// canonical correspondence (same barycentric coordinates on the canonical
/// mesh).
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: V3,
    pub normal: V3,
    pub face: usize,
    pub barycentric: [f64; 3],
    pub canonical: V3,
}

/// Area-weighted uniform surface sampling, deterministic per seed.
///
/// `canonical` must share topology with `mesh`; the correspondence point is
/// the same barycentric location on the canonical mesh. Pass the mesh itself
/// to get self-correspondences. Zero-area faces are never selected.
pub fn sample_surface(
    mesh: &Mesh,
    canonical: &Mesh,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SurfaceSample>> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be > 0".into()));
    }
    if mesh.faces.len() != canonical.faces.len() {
        return Err(Error::Dimension(
            "canonical mesh topology differs from posed mesh".into(),
        ));
    }
    // Cumulative area table for face selection.
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::Config("mesh has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let u: f64 = rng.gen::<f64>() * acc;
        let f = cdf.partition_point(|&c| c < u).min(mesh.faces.len() - 1);
        if mesh.face_area(f) <= 0.0 {
            continue;
        }
        // Uniform barycentric via the sqrt trick.
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let point = mesh.barycentric_point(f, bary);
        out.push(SurfaceSample {
            point,
            normal: mesh.face_normal(f),
            face: f,
            barycentric: bary,
            canonical: canonical.barycentric_point(f, bary),
        });
    }
    Ok(out)
}

/// Uniform samples inside an axis-aligned box, deterministic per seed.
pub fn sample_volume(bbox: &Aabb, n_samples: usize, seed: u64) -> Vec<V3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let mut p = [0.0; 3];
            for i in 0..3 {
                p[i] = bbox.min[i] + rng.gen::<f64>() * (bbox.max[i] - bbox.min[i]);
            }
            p
        })
        .collect()
}

/// Approximate canonical correspondence for an arbitrary (possibly
/// off-surface) point: project onto the posed mesh, transfer barycentrically
/// to the canonical mesh, then offset along the canonical normal by the
/// signed distance. A test reference only, with stated tolerance; never used
/// as training supervision off the surface.
pub fn correspondence_oracle(
    mesh_posed: &Mesh,
    mesh_canon: &Mesh,
    bvh_posed: &Bvh,
    x: V3,
) -> V3 {
    let sd = super::signed_distance(mesh_posed, x, Some(bvh_posed));
    let base = mesh_canon.barycentric_point(sd.face, sd.barycentric);
    // Interpolated vertex normal gives a continuous offset direction.
    let normals = mesh_canon.vertex_normals();
    let [a, b, c] = mesh_canon.faces[sd.face];
    let n = math::normalize(math::add(
        math::add(
            math::scale(normals[a as usize], sd.barycentric[0]),
            math::scale(normals[b as usize], sd.barycentric[1]),
        ),
        math::scale(normals[c as usize], sd.barycentric[2]),
    ));
    math::add(base, math::scale(n, sd.distance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_tetrahedron;

    #[test]
    fn self_correspondence_is_identity() {
        let m = unit_tetrahedron();
        let samples = sample_surface(&m, &m, 64, 3).unwrap();
        for s in &samples {
            assert_eq!(s.point, s.canonical);
            approx::assert_abs_diff_eq!(math::norm(s.normal), 1.0, epsilon = 1e-12);
            let rebuilt = m.barycentric_point(s.face, s.barycentric);
            approx::assert_abs_diff_eq!(math::dist(rebuilt, s.point), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn volume_samples_inside_and_deterministic() {
        let bb = Aabb {
            min: [-1.0, 0.0, 2.0],
            max: [1.0, 3.0, 5.0],
        };
        let a = sample_volume(&bb, 256, 11);
        let b = sample_volume(&bb, 256, 11);
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| bb.contains(p)));
    }

    #[test]
    fn area_weighting_chi_square() {
        // Tetrahedron face areas: three of 0.5 and one of sqrt(3)/2.
        let m = unit_tetrahedron();
        let n = 100_000;
        let samples = sample_surface(&m, &m, n, 99).unwrap();
        let mut counts = [0usize; 4];
        for s in &samples {
            counts[s.face] += 1;
        }
        let total_area = m.total_area();
        let mut chi2 = 0.0;
        for f in 0..4 {
            let expected = n as f64 * m.face_area(f) / total_area;
            let d = counts[f] as f64 - expected;
            chi2 += d * d / expected;
        }
        // 3 dof, p = 0.001 critical value is 16.27.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn oracle_identity_deformation() {
        let m = unit_tetrahedron();
        let bvh = Bvh::build(&m);
        // Point near the slanted face, within the normal-projection regime.
        let x = [0.4, 0.4, 0.4];
        let x_ref = correspondence_oracle(&m, &m, &bvh, x);
        assert!(math::dist(x, x_ref) < 1e-9);
    }
}
