//! Central finite-difference spatial gradients.
//!
//! Input gradients of learned fields are taken by a 6-evaluation central
//! stencil rather than nested analytic double-backprop. Each stencil
//! evaluation is an ordinary forward pass, so parameter gradients of any
//! loss built on the stencil fall out of reverse mode applied to those six
//! passes (see the semantic-SDF losses for the batched version).

use crate::math::V3;

/// Central-difference gradient of a scalar field at `x` with step `h`.
pub fn input_gradient_fd<F: Fn(V3) -> f64>(f: F, x: V3, h: f64) -> V3 {
    assert!(h > 0.0, "step must be positive");
    let mut g = [0.0; 3];
    for k in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[k] += h;
        xm[k] -= h;
        g[k] = (f(xp) - f(xm)) / (2.0 * h);
    }
    g
}

/// The six stencil points around `x` in the fixed order (+x, -x, +y, -y,
/// +z, -z) used by the batched loss paths.
pub fn stencil_points(x: V3, h: f64) -> [V3; 6] {
    let mut pts = [x; 6];
    pts[0][0] += h;
    pts[1][0] -= h;
    pts[2][1] += h;
    pts[3][1] -= h;
    pts[4][2] += h;
    pts[5][2] -= h;
    pts
}

/// Recombines six stencil values into the gradient.
#[inline]
pub fn stencil_gradient(values: &[f64; 6], h: f64) -> V3 {
    let inv = 0.5 / h;
    [
        (values[0] - values[1]) * inv,
        (values[2] - values[3]) * inv,
        (values[4] - values[5]) * inv,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use approx::assert_abs_diff_eq;

    #[test]
    fn norm_gradient_is_radial() {
        let g = input_gradient_fd(math::norm, [2.0, 0.0, 0.0], 1e-4);
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(g[2], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn linear_field_exact_for_any_step() {
        let f = |x: math::V3| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2] + 7.0;
        for h in [1e-6, 1e-3, 0.5] {
            let g = input_gradient_fd(f, [0.3, -0.9, 2.0], h);
            assert_abs_diff_eq!(g[0], 3.0, epsilon = 1e-9);
            assert_abs_diff_eq!(g[1], -2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(g[2], 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn sphere_sdf_eikonal_residual_tiny() {
        let sdf = |x: math::V3| math::norm(x) - 1.0;
        let g = input_gradient_fd(sdf, [0.4, -0.7, 0.5], 1e-3);
        assert!((math::norm(g) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn stencil_matches_direct() {
        let f = |x: math::V3| (x[0] * 1.7).sin() + x[1] * x[2];
        let x = [0.3, 0.8, -0.2];
        let h = 1e-4;
        let pts = stencil_points(x, h);
        let vals: Vec<f64> = pts.iter().map(|&p| f(p)).collect();
        let g = stencil_gradient(&vals.try_into().unwrap(), h);
        let direct = input_gradient_fd(f, x, h);
        for k in 0..3 {
            assert_abs_diff_eq!(g[k], direct[k], epsilon = 1e-12);
        }
    }
}
