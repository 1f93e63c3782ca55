//! Pinhole camera: world-to-camera extrinsics plus intrinsics.

use crate::error::{Error, Result};
use crate::math::{self, V3};

/// CV convention: camera x right, y down, z forward; pixel (u, v) with v
/// increasing downward.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation: x_cam = R x_world + t.
    pub translation: V3,
    /// Focal length in pixels.
    pub focal: f64,
    pub principal: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at `eye` looking at `target`, world up +y.
    pub fn look_at(eye: V3, target: V3, focal: f64, width: u32, height: u32) -> Result<Self> {
        if focal <= 0.0 {
            return Err(Error::Config("focal length must be positive".into()));
        }
        let fwd = math::normalize(math::sub(target, eye));
        let right = math::normalize(math::cross(fwd, [0.0, 1.0, 0.0]));
        if math::norm(right) < 0.5 {
            return Err(Error::Config("view direction parallel to world up".into()));
        }
        let down = math::cross(fwd, right);
        let rotation = [right, down, fwd];
        let translation = math::scale(math::mat_mul_v(&rotation, eye), -1.0);
        Ok(Camera {
            rotation,
            translation,
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
        })
    }

    pub fn position(&self) -> V3 {
        // eye = -R^T t
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    pub fn to_camera(&self, p: V3) -> V3 {
        math::add(math::mat_mul_v(&self.rotation, p), self.translation)
    }

    /// Projects one world point; `None` when depth is not positive.
    pub fn project_point(&self, p: V3) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c[2] <= 1e-9 {
            return None;
        }
        Some([
            self.principal[0] + self.focal * c[0] / c[2],
            self.principal[1] + self.focal * c[1] / c[2],
        ])
    }

    /// Batch projection with per-point validity flags.
    pub fn project(&self, pts: &[V3]) -> Vec<Option<[f64; 2]>> {
        pts.iter().map(|&p| self.project_point(p)).collect()
    }

    /// Jacobian of the pixel coordinates with respect to the world point.
    /// Returns rows d(u)/dx and d(v)/dx, or `None` behind the camera.
    pub fn project_jacobian(&self, p: V3) -> Option<[V3; 2]> {
        let c = self.to_camera(p);
        if c[2] <= 1e-9 {
            return None;
        }
        let r = &self.rotation;
        let iz = 1.0 / c[2];
        let mut rows = [[0.0; 3]; 2];
        for axis in 0..2 {
            for k in 0..3 {
                rows[axis][k] = self.focal * (r[axis][k] * iz - c[axis] * iz * iz * r[2][k]);
            }
        }
        Some(rows)
    }

    /// World-space ray through the center of pixel (i, j).
    pub fn pixel_ray(&self, u: f64, v: f64) -> (V3, V3) {
        let dir_cam = [
            (u - self.principal[0]) / self.focal,
            (v - self.principal[1]) / self.focal,
            1.0,
        ];
        // R^T d
        let r = &self.rotation;
        let d = [
            r[0][0] * dir_cam[0] + r[1][0] * dir_cam[1] + r[2][0] * dir_cam[2],
            r[0][1] * dir_cam[0] + r[1][1] * dir_cam[1] + r[2][1] * dir_cam[2],
            r[0][2] * dir_cam[0] + r[1][2] * dir_cam[1] + r[2][2] * dir_cam[2],
        ];
        (self.position(), math::normalize(d))
    }

    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 {
            return Err(Error::Config("focal length must be positive".into()));
        }
        // Orthonormal with determinant +1.
        let r = &self.rotation;
        let rows = [r[0], r[1], r[2]];
        for i in 0..3 {
            for j in 0..3 {
                let d = math::dot(rows[i], rows[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                if (d - expected).abs() > 1e-9 {
                    return Err(Error::Config("camera rotation not orthonormal".into()));
                }
            }
        }
        let det = math::dot(rows[0], math::cross(rows[1], rows[2]));
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::Config("camera rotation determinant != +1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam() -> Camera {
        Camera::look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], 300.0, 256, 256).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = cam();
        c.validate().unwrap();
        let px = c.project_point([0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(px[0], 128.0, epsilon = 1e-9);
        assert_abs_diff_eq!(px[1], 128.0, epsilon = 1e-9);
    }

    #[test]
    fn pinhole_formula_and_depth_scaling() {
        // Camera looks down -z from (0,0,1); camera x aligns with world x.
        let c = cam();
        let px = c.project_point([0.1, 0.0, 0.5]).unwrap(); // depth 0.5
        assert_abs_diff_eq!(px[0], 128.0 + 300.0 * 0.1 / 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(px[1], 128.0, epsilon = 1e-9);
        let far = c.project_point([0.1, 0.0, 0.0]).unwrap(); // depth 1.0
        assert_abs_diff_eq!(far[0] - 128.0, (px[0] - 128.0) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_flagged() {
        let c = cam();
        assert!(c.project_point([0.0, 0.0, 2.0]).is_none());
    }

    #[test]
    fn projection_jacobian_matches_fd() {
        let c = cam();
        let p = [0.07, -0.04, 0.2];
        let jac = c.project_jacobian(p).unwrap();
        let h = 1e-7;
        for k in 0..3 {
            let mut pp = p;
            let mut pm = p;
            pp[k] += h;
            pm[k] -= h;
            let a = c.project_point(pp).unwrap();
            let b = c.project_point(pm).unwrap();
            for axis in 0..2 {
                assert_abs_diff_eq!(jac[axis][k], (a[axis] - b[axis]) / (2.0 * h), epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn pixel_ray_roundtrip() {
        let c = cam();
        let p = [0.03, 0.05, -0.1];
        let px = c.project_point(p).unwrap();
        let (o, d) = c.pixel_ray(px[0], px[1]);
        // The ray should pass through p.
        let t = math::dot(math::sub(p, o), d);
        let closest = math::add(o, math::scale(d, t));
        assert!(math::dist(closest, p) < 1e-9);
    }
}
