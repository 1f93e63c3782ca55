//! Exact ray-cast reference renderer for the parametric head.
//!
//! Casts one ray per pixel against the posed mesh (BVH accelerated) and
//! shades the nearest hit with Lambert lighting over a procedural albedo.
//! The albedo is anchored in template coordinates, so it sticks to the
//! surface under pose and shape changes, and it carries expression-driven
//! wrinkle bands so that images genuinely depend on the expression
//! coefficients beyond what geometry alone reveals.

use super::RenderOutput;
use crate::error::Result;
use crate::head::{pose_mesh, Camera, ControlParams, HeadModel};
use crate::io::FloatMap;
use crate::math::{self, V3};
use crate::mesh::Bvh;

/// Direction toward the light, world space (normalized on use).
const LIGHT: V3 = [0.4, 0.5, 1.0];
const AMBIENT: f64 = 0.35;
const DIFFUSE: f64 = 0.65;

/// Surface albedo at a hit, defined on the template so it is pose-invariant,
/// with sinusoidal wrinkle bands whose strength follows the expression
/// coefficients.
pub fn textured_color(model: &HeadModel, p: &ControlParams, face: usize, bary: [f64; 3]) -> [f64; 3] {
    let tpos = model.template.barycentric_point(face, bary);
    let c = model.bbox.center();
    let d = model.bbox.diagonal().max(1e-12);
    let q = math::scale(math::sub(tpos, c), 1.0 / d);
    // Smooth base tint varying over the head.
    let mut rgb = [
        0.72 + 0.12 * (7.0 * q[0] + 3.0 * q[1]).sin(),
        0.58 + 0.12 * (5.0 * q[1] - 4.0 * q[2]).sin(),
        0.50 + 0.12 * (6.0 * q[2] + 2.0 * q[0]).sin(),
    ];
    // Expression wrinkles: each coefficient drives a band at its own
    // frequency and orientation, strongest around the lower face.
    let lower = 0.5 + 0.5 * (-6.0 * q[1]).tanh();
    let mut wrinkle = 0.0;
    for (j, &b) in p.beta.iter().enumerate() {
        let f = 14.0 + 3.0 * j as f64;
        let dir = [
            (1.3 * j as f64).cos(),
            (0.7 * j as f64 + 1.0).sin(),
            (2.1 * j as f64).cos(),
        ];
        wrinkle += b * (f * math::dot(q, dir)).sin();
    }
    let m = 1.0 + 0.25 * lower * (wrinkle).tanh();
    for ch in &mut rgb {
        *ch = (*ch * m).clamp(0.0, 1.0);
    }
    rgb
}

/// Reference render: RGB, depth (ray parameter at the hit, 0 on miss) and a
/// binary coverage mask in the opacity channel.
pub fn raster_render(
    model: &HeadModel,
    p: &ControlParams,
    cam: &Camera,
    background: [f64; 3],
) -> Result<RenderOutput> {
    cam.validate()?;
    let mesh = pose_mesh(model, p)?;
    let bvh = Bvh::build(&mesh);
    let light = math::normalize(LIGHT);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut rgb = FloatMap::new(w, h, 3);
    let mut depth = FloatMap::new(w, h, 1);
    let mut opacity = FloatMap::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (origin, dir) = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            match bvh.ray_intersect(&mesh, origin, dir, 1e-9) {
                None => {
                    for c in 0..3 {
                        rgb.set(x, y, c, background[c] as f32);
                    }
                }
                Some((t, face, bary)) => {
                    let mut n = mesh.face_normal(face);
                    // Shade the side facing the camera.
                    if math::dot(n, dir) > 0.0 {
                        n = math::scale(n, -1.0);
                    }
                    let shade = AMBIENT + DIFFUSE * math::dot(n, light).max(0.0);
                    let albedo = textured_color(model, p, face, bary);
                    for c in 0..3 {
                        rgb.set(x, y, c, (albedo[c] * shade).clamp(0.0, 1.0) as f32);
                    }
                    depth.set(x, y, 0, t as f32);
                    opacity.set(x, y, 0, 1.0);
                }
            }
        }
    }
    Ok(RenderOutput { rgb, depth, opacity })
}
