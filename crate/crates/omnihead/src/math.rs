//! Small fixed-size vector helpers used throughout the geometry code.
//!
//! Points and directions are plain `[f64; 3]`; keeping them as arrays makes
//! the hot loops (triangle distance, winding numbers, ray marching) easy for
//! the compiler to unroll and keeps the public types dependency-free.

pub type V3 = [f64; 3];

#[inline]
pub fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: V3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn normalize(a: V3) -> V3 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n)
    } else {
        a
    }
}

#[inline]
pub fn dist(a: V3, b: V3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn lerp(a: V3, b: V3, t: f64) -> V3 {
    add(scale(a, 1.0 - t), scale(b, t))
}

#[inline]
pub fn finite(a: V3) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Rodrigues rotation of `v` by the axis-angle vector `w` (angle = |w|).
pub fn rotate(w: V3, v: V3) -> V3 {
    let t = norm(w);
    if t < 1e-12 {
        // First-order expansion; exact enough at this magnitude.
        return add(v, cross(w, v));
    }
    let k = scale(w, 1.0 / t);
    let (s, c) = t.sin_cos();
    // v cos t + (k x v) sin t + k (k.v)(1 - cos t)
    add(
        add(scale(v, c), scale(cross(k, v), s)),
        scale(k, dot(k, v) * (1.0 - c)),
    )
}

/// 3x3 rotation matrix (row-major) of the axis-angle vector `w`.
pub fn rotation_matrix(w: V3) -> [[f64; 3]; 3] {
    let ex = rotate(w, [1.0, 0.0, 0.0]);
    let ey = rotate(w, [0.0, 1.0, 0.0]);
    let ez = rotate(w, [0.0, 0.0, 1.0]);
    // Columns are the rotated basis vectors.
    [
        [ex[0], ey[0], ez[0]],
        [ex[1], ey[1], ez[1]],
        [ex[2], ey[2], ez[2]],
    ]
}

#[inline]
pub fn mat_mul_v(m: &[[f64; 3]; 3], v: V3) -> V3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Derivative of `rotate(w, v)` with respect to each component of `w`.
///
/// Returns `[d(Rv)/dw_x, d(Rv)/dw_y, d(Rv)/dw_z]` using the closed form of
/// Gallego & Yezzi, with the small-angle limit `d(Rv)/dw_i = e_i x v`.
pub fn rotate_jacobian_w(w: V3, v: V3) -> [V3; 3] {
    let t2 = norm_sq(w);
    if t2 < 1e-16 {
        let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        return [cross(e[0], v), cross(e[1], v), cross(e[2], v)];
    }
    let rv = rotate(w, v);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        let mut e_i = [0.0; 3];
        e_i[i] = 1.0;
        // (w_i [w]x + [w x (I - R) e_i]x) / |w|^2 applied to R v
        let re_i = rotate(w, e_i);
        let imr_e = sub(e_i, re_i);
        let a = cross(w, imr_e);
        // M rv where M = (w_i [w]x + [a]x) / t2
        let term = add(scale(cross(w, rv), w[i]), cross(a, rv));
        out[i] = scale(term, 1.0 / t2);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rotate_matches_quarter_turn() {
        let w = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let r = rotate(w, [1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotate_preserves_length() {
        let w = [0.3, -0.2, 0.5];
        let v = [0.7, -1.1, 0.4];
        assert_abs_diff_eq!(norm(rotate(w, v)), norm(v), epsilon = 1e-12);
    }

    #[test]
    fn rotation_jacobian_matches_fd() {
        let cases = [
            ([0.3, -0.4, 0.2], [0.5, 1.0, -0.7]),
            ([0.0, 0.0, 0.0], [1.0, 2.0, 3.0]),
            ([1e-9, 0.0, 0.0], [0.0, 1.0, 0.0]),
            ([-0.9, 0.2, 0.7], [0.1, -0.3, 0.8]),
        ];
        let h = 1e-6;
        for (w, v) in cases {
            let jac = rotate_jacobian_w(w, v);
            for i in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[i] += h;
                wm[i] -= h;
                let fd = scale(sub(rotate(wp, v), rotate(wm, v)), 0.5 / h);
                for c in 0..3 {
                    assert_abs_diff_eq!(jac[i][c], fd[c], epsilon = 1e-7);
                }
            }
        }
    }
}
