//! Blendshapes + linear blend skinning, with analytic Jacobians.
//!
//! A vertex is first displaced linearly by the shape and expression bases,
//! then skinned about the neck joint and the (hierarchically nested) jaw
//! joint:
//!
//!   v' = w_root v + w_n T_n(v) + w_j T_n(T_j(v)),
//!
//! where T_k rotates about the joint rest position by the axis-angle in
//! theta. Topology is never edited, so watertightness is preserved.

use super::{ControlParams, HeadModel};
use crate::error::Result;
use crate::math::{self, V3};
use crate::mesh::Mesh;

/// Applies blendshapes and skinning; returns the posed mesh.
pub fn pose_mesh(model: &HeadModel, p: &ControlParams) -> Result<Mesh> {
    model.check_params(p)?;
    let vertices = pose_vertices(model, p);
    Ok(Mesh::new(vertices, model.template.faces.clone()))
}

pub fn pose_vertices(model: &HeadModel, p: &ControlParams) -> Vec<V3> {
    let theta_n: V3 = [p.theta[0], p.theta[1], p.theta[2]];
    let theta_j: V3 = [p.theta[3], p.theta[4], p.theta[5]];
    let neck_id = theta_n == [0.0; 3];
    let jaw_id = theta_j == [0.0; 3];
    let r_n = math::rotation_matrix(theta_n);
    let r_j = math::rotation_matrix(theta_j);
    let [c_n, c_j] = model.joints;

    (0..model.n_vertices())
        .map(|vi| {
            let mut v = model.template.vertices[vi];
            for (k, basis) in model.shape_basis.iter().enumerate() {
                v = math::add(v, math::scale(basis[vi], p.alpha[k]));
            }
            for (k, basis) in model.expr_basis.iter().enumerate() {
                v = math::add(v, math::scale(basis[vi], p.beta[k]));
            }
            if neck_id && jaw_id {
                return v;
            }
            let [w_n, w_j] = model.skin_weights[vi];
            // Blend as v + w (T v - v): identity transforms and zero weights
            // then leave vertices bit-exact.
            let tn = if neck_id {
                v
            } else {
                math::add(math::mat_mul_v(&r_n, math::sub(v, c_n)), c_n)
            };
            let tj = if jaw_id {
                v
            } else {
                math::add(math::mat_mul_v(&r_j, math::sub(v, c_j)), c_j)
            };
            let tnj = if neck_id {
                tj
            } else {
                math::add(math::mat_mul_v(&r_n, math::sub(tj, c_n)), c_n)
            };
            math::add(
                v,
                math::add(
                    math::scale(math::sub(tn, v), w_n),
                    math::scale(math::sub(tnj, v), w_j),
                ),
            )
        })
        .collect()
}

/// Jacobian of one posed vertex with respect to the flat control vector
/// [alpha, beta, theta]; rows are (x, y, z), `dim` columns.
pub fn pose_vertex_jacobian(model: &HeadModel, p: &ControlParams, vi: usize) -> Vec<[f64; 3]> {
    let d_alpha = model.d_alpha();
    let d_beta = model.d_beta();
    let dim = d_alpha + d_beta + 6;
    let theta_n: V3 = [p.theta[0], p.theta[1], p.theta[2]];
    let theta_j: V3 = [p.theta[3], p.theta[4], p.theta[5]];
    let r_n = math::rotation_matrix(theta_n);
    let r_j = math::rotation_matrix(theta_j);
    let [c_n, c_j] = model.joints;
    let [w_n, w_j] = model.skin_weights[vi];
    let w_root = 1.0 - w_n - w_j;

    let mut v = model.template.vertices[vi];
    for (k, basis) in model.shape_basis.iter().enumerate() {
        v = math::add(v, math::scale(basis[vi], p.alpha[k]));
    }
    for (k, basis) in model.expr_basis.iter().enumerate() {
        v = math::add(v, math::scale(basis[vi], p.beta[k]));
    }

    let mut jac = vec![[0.0; 3]; dim];

    // Blendshape columns: the displacement passes through the same skinning
    // rotations as the vertex itself.
    let skin_dir = |d: V3| -> V3 {
        let dn = math::mat_mul_v(&r_n, d);
        let dnj = math::mat_mul_v(&r_n, math::mat_mul_v(&r_j, d));
        math::add(
            math::add(math::scale(d, w_root), math::scale(dn, w_n)),
            math::scale(dnj, w_j),
        )
    };
    for (k, basis) in model.shape_basis.iter().enumerate() {
        jac[k] = skin_dir(basis[vi]);
    }
    for (k, basis) in model.expr_basis.iter().enumerate() {
        jac[d_alpha + k] = skin_dir(basis[vi]);
    }

    // Neck columns: both the directly skinned part and the jaw-composed part
    // rotate with the neck.
    let a_n = math::sub(v, c_n);
    let tj = math::add(math::mat_mul_v(&r_j, math::sub(v, c_j)), c_j);
    let a_nj = math::sub(tj, c_n);
    let d_n = math::rotate_jacobian_w(theta_n, a_n);
    let d_nj = math::rotate_jacobian_w(theta_n, a_nj);
    for i in 0..3 {
        jac[d_alpha + d_beta + i] = math::add(
            math::scale(d_n[i], w_n),
            math::scale(d_nj[i], w_j),
        );
    }

    // Jaw columns: chain through the neck rotation.
    let d_j = math::rotate_jacobian_w(theta_j, math::sub(v, c_j));
    for i in 0..3 {
        jac[d_alpha + d_beta + 3 + i] = math::scale(math::mat_mul_v(&r_n, d_j[i]), w_j);
    }
    jac
}

/// Jacobians for a set of vertices, in vertex order.
pub fn pose_vertices_jacobian(
    model: &HeadModel,
    p: &ControlParams,
    vertex_ids: &[usize],
) -> Vec<Vec<[f64; 3]>> {
    vertex_ids
        .iter()
        .map(|&vi| pose_vertex_jacobian(model, p, vi))
        .collect()
}

/// Barycentric interpolation of the landmark anchors on the posed mesh.
pub fn landmarks3d(model: &HeadModel, p: &ControlParams) -> Result<Vec<V3>> {
    let posed = pose_mesh(model, p)?;
    Ok(model
        .landmarks
        .iter()
        .map(|lm| posed.barycentric_point(lm.face as usize, lm.barycentric))
        .collect())
}

/// Jacobian of every 3D landmark with respect to the flat control vector.
pub fn landmarks3d_jacobian(model: &HeadModel, p: &ControlParams) -> Vec<Vec<[f64; 3]>> {
    model
        .landmarks
        .iter()
        .map(|lm| {
            let face = model.template.faces[lm.face as usize];
            let dim = p.dim();
            let mut acc = vec![[0.0; 3]; dim];
            for (corner, &vi) in face.iter().enumerate() {
                let w = lm.barycentric[corner];
                let j = pose_vertex_jacobian(model, p, vi as usize);
                for col in 0..dim {
                    acc[col] = math::add(acc[col], math::scale(j[col], w));
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_template, ModelConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn small_model() -> HeadModel {
        build_template(&ModelConfig {
            subdivisions: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_params_reproduce_template() {
        let m = small_model();
        let posed = pose_mesh(&m, &ControlParams::zeros(10, 10)).unwrap();
        assert_eq!(posed.vertices, m.template.vertices);
    }

    #[test]
    fn blendshapes_superpose_linearly() {
        let m = small_model();
        let mut a1 = ControlParams::zeros(10, 10);
        let mut a2 = ControlParams::zeros(10, 10);
        a1.alpha[0] = 0.8;
        a1.alpha[3] = -0.4;
        a2.alpha[1] = 1.3;
        a2.alpha[3] = 0.9;
        let mut sum = ControlParams::zeros(10, 10);
        for k in 0..10 {
            sum.alpha[k] = a1.alpha[k] + a2.alpha[k];
        }
        let v1 = pose_vertices(&m, &a1);
        let v2 = pose_vertices(&m, &a2);
        let vs = pose_vertices(&m, &sum);
        for vi in 0..m.n_vertices() {
            let lhs = vs[vi];
            let rhs = math::sub(math::add(v1[vi], v2[vi]), m.template.vertices[vi]);
            approx::assert_abs_diff_eq!(math::dist(lhs, rhs), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn jaw_rotation_leaves_skull_fixed() {
        let m = small_model();
        let mut p = ControlParams::zeros(10, 10);
        p.theta[3] = super::super::CANONICAL_JAW_RAD;
        let posed = pose_vertices(&m, &p);
        let mut moved = 0usize;
        for vi in 0..m.n_vertices() {
            let d = math::dist(posed[vi], m.template.vertices[vi]);
            if m.skin_weights[vi][1] == 0.0 {
                assert!(d < 1e-14, "non-jaw vertex {vi} moved by {d}");
            } else if d > 1e-6 {
                moved += 1;
            }
        }
        assert!(moved > 10, "jaw region should actually move");
    }

    #[test]
    fn posing_preserves_watertightness() {
        let m = small_model();
        let mut p = ControlParams::zeros(10, 10);
        p.alpha.iter_mut().for_each(|a| *a = 1.0);
        p.theta = [0.2, -0.1, 0.1, 0.3, 0.05, -0.05];
        pose_mesh(&m, &p).unwrap().check_watertight().unwrap();
    }

    #[test]
    fn non_finite_params_rejected() {
        let m = small_model();
        let mut p = ControlParams::zeros(10, 10);
        p.beta[2] = f64::NAN;
        assert!(pose_mesh(&m, &p).is_err());
        let bad_dims = ControlParams::zeros(3, 10);
        assert!(pose_mesh(&m, &bad_dims).is_err());
    }

    #[test]
    fn vertex_landmark_is_posed_vertex() {
        let mut m = small_model();
        m.landmarks[0] = super::super::LandmarkAnchor {
            face: 17,
            barycentric: [1.0, 0.0, 0.0],
        };
        let mut p = ControlParams::zeros(10, 10);
        p.theta = [0.1, 0.0, -0.05, 0.2, 0.0, 0.0];
        p.beta[1] = 0.7;
        let lms = landmarks3d(&m, &p).unwrap();
        let posed = pose_vertices(&m, &p);
        let vi = m.template.faces[17][0] as usize;
        approx::assert_abs_diff_eq!(math::dist(lms[0], posed[vi]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn jaw_landmark_follows_skinned_rigid_transform() {
        // Pick a landmark fully inside the jaw region (all three anchor
        // vertices with w_j ~ 1) and check it moves by the rigid jaw+neck
        // transform applied by hand.
        let m = build_template(&ModelConfig {
            subdivisions: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let lip = &m.landmarks[15]; // lower lip: anchor weights exactly (0, 1)
        let face = m.template.faces[lip.face as usize];
        let all_jaw = face
            .iter()
            .all(|&vi| m.skin_weights[vi as usize] == [0.0, 1.0]);
        assert!(all_jaw, "lower-lip anchor should be fully jaw-weighted");
        let mut p = ControlParams::zeros(10, 10);
        p.theta[3] = 0.3;
        let lms = landmarks3d(&m, &p).unwrap();
        let lm0 = m
            .template
            .barycentric_point(lip.face as usize, lip.barycentric);
        let expected = math::add(
            math::mat_mul_v(
                &math::rotation_matrix([0.3, 0.0, 0.0]),
                math::sub(lm0, m.joints[1]),
            ),
            m.joints[1],
        );
        assert!(math::dist(lms[15], expected) < 1e-12);
    }

    #[test]
    fn pose_jacobian_matches_fd() {
        let m = small_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut p = ControlParams::zeros(10, 10);
        p.alpha.iter_mut().for_each(|a| *a = rng.gen_range(-1.0..1.0));
        p.beta.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        p.theta = [0.15, -0.22, 0.08, 0.31, -0.12, 0.05];
        let flat = p.to_flat();
        let h = 1e-6;
        for vi in [0usize, 40, 101, 155] {
            let jac = pose_vertex_jacobian(&m, &p, vi);
            for col in 0..flat.len() {
                let mut fp = flat.clone();
                let mut fm = flat.clone();
                fp[col] += h;
                fm[col] -= h;
                let pp = ControlParams::from_flat(&fp, 10, 10).unwrap();
                let pm = ControlParams::from_flat(&fm, 10, 10).unwrap();
                let vp = pose_vertices(&m, &pp)[vi];
                let vm = pose_vertices(&m, &pm)[vi];
                let fd = math::scale(math::sub(vp, vm), 0.5 / h);
                for c in 0..3 {
                    approx::assert_abs_diff_eq!(jac[col][c], fd[c], epsilon = 1e-7);
                }
            }
        }
    }
}
