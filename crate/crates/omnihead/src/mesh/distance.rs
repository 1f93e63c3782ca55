//! Exact point-to-mesh signed distance.
//!
//! Unsigned distance comes from the standard 7-region closest-point
//! classification on each triangle; sign from the generalized winding number
//! (inside where w >= 1/2), which is unambiguous for watertight meshes.

use super::{Bvh, Mesh};
use crate::math::{self, V3};

/// Result of a signed distance query.
#[derive(Debug, Clone, Copy)]
pub struct SignedDistance {
    pub distance: f64,
    pub face: usize,
    pub barycentric: [f64; 3],
    /// Closest point on the surface.
    pub point: V3,
}

/// Closest point on triangle (a, b, c) to `p`.
///
/// Returns (closest point, barycentric coords). Ericson's 7-region
/// classification: vertex, edge and face regions handled separately.
pub fn closest_point_triangle(p: V3, a: V3, b: V3, c: V3) -> (V3, [f64; 3]) {
    let ab = math::sub(b, a);
    let ac = math::sub(c, a);
    let ap = math::sub(p, a);

    let d1 = math::dot(ab, ap);
    let d2 = math::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = math::sub(p, b);
    let d3 = math::dot(ab, bp);
    let d4 = math::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (math::add(a, math::scale(ab, v)), [1.0 - v, v, 0.0]);
    }

    let cp = math::sub(p, c);
    let d5 = math::dot(ab, cp);
    let d6 = math::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (math::add(a, math::scale(ac, w)), [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let q = math::add(b, math::scale(math::sub(c, b), w));
        return (q, [0.0, 1.0 - w, w]);
    }

    // Interior region.
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = math::add(a, math::add(math::scale(ab, v), math::scale(ac, w)));
    (q, [1.0 - v - w, v, w])
}

/// Generalized winding number of `mesh` at `p` (Jacobson et al.): sum of
/// signed solid angles over all triangles divided by 4 pi. Approximately 1
/// inside a watertight mesh, 0 outside.
pub fn winding_number(mesh: &Mesh, p: V3) -> f64 {
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let [va, vb, vc] = mesh.face_vertices(f);
        total += solid_angle(math::sub(va, p), math::sub(vb, p), math::sub(vc, p));
    }
    total / (4.0 * std::f64::consts::PI)
}

/// Signed solid angle subtended by triangle (a, b, c) as seen from the
/// origin (van Oosterom & Strackee).
#[inline]
fn solid_angle(a: V3, b: V3, c: V3) -> f64 {
    let la = math::norm(a);
    let lb = math::norm(b);
    let lc = math::norm(c);
    let num = math::dot(a, math::cross(b, c));
    let den = la * lb * lc
        + math::dot(a, b) * lc
        + math::dot(b, c) * la
        + math::dot(c, a) * lb;
    2.0 * num.atan2(den)
}

/// Exact signed distance from `p` to a watertight mesh. Negative inside
/// (winding number >= 1/2). Brute force over faces unless a [`Bvh`] is
/// supplied for the closest-point search; the winding sum is always exact.
pub fn signed_distance(mesh: &Mesh, p: V3, bvh: Option<&Bvh>) -> SignedDistance {
    let (d_sq, face, point, bary) = match bvh {
        Some(tree) => tree.closest_point(mesh, p),
        None => {
            let mut best = (f64::INFINITY, 0usize, [0.0; 3], [0.0; 3]);
            for f in 0..mesh.faces.len() {
                let [a, b, c] = mesh.face_vertices(f);
                let (q, w) = closest_point_triangle(p, a, b, c);
                let d2 = math::norm_sq(math::sub(p, q));
                if d2 < best.0 {
                    best = (d2, f, q, w);
                }
            }
            best
        }
    };
    let inside = winding_number(mesh, p) >= 0.5;
    let d = d_sq.sqrt();
    SignedDistance {
        distance: if inside { -d } else { d },
        face,
        barycentric: bary,
        point,
    }
}
