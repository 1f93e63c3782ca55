//! Stage-1 losses for the warp field.
//!
//! Three terms over a batch drawn from one posed head:
//! - iso: on-surface samples must lie on the zero level set with the field
//!   gradient matching the surface normal, mean(huber(s) + sum_a huber(grad_a s - n_a)).
//! - eik: off-surface samples keep a unit-norm spatial gradient,
//!   mean huber( ||grad s||_2 - 1 ).
//! - sem: predicted canonical correspondences match the oracle transfer,
//!   mean sum_a huber(x_bar_a - x_bar*_a).
//!
//! All residuals go through a smooth-L1 (Huber) penalty with a shared
//! transition scale `delta`: quadratic inside |r| < delta, `|r| - delta/2`
//! outside, so values stay L1-comparable while the gradient vanishes
//! continuously at zero residual. That matters under Adam: with a hard L1
//! the per-sample gradient keeps unit magnitude however small the residual,
//! so the iterate random-walks at a floor set by the learning rate; the
//! quadratic core lets small residuals keep shrinking. `delta <= 0` recovers
//! exact L1.
//!
//! Spatial gradients are 6-point central stencils through the warp. The
//! parameter gradient is exact reverse mode through every stencil forward
//! pass: each stencil value s = s_bar(x_bar) contributes a cotangent on its
//! warped point equal to (d loss / d s) * grad s_bar(x_bar), and all rows go
//! through one batched backward pass.

use crate::error::{Error, Result};
use crate::head::ControlParams;
use crate::math::{self, V3};
use crate::mesh::SurfaceSample;
use crate::nn::{stencil_gradient, stencil_points};
use crate::wfield::WNet;
use ndarray::Array2;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub iso: f64,
    pub eik: f64,
    pub sem: f64,
    /// Smooth-L1 transition scale shared by all residuals; `<= 0` selects
    /// exact L1.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.01
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            iso: 1.0,
            eik: 0.1,
            sem: 1.0,
            delta: default_delta(),
        }
    }
}

/// Smooth-L1 penalty of a residual: `r^2 / (2 delta)` inside `|r| < delta`,
/// `|r| - delta/2` outside. `delta <= 0` degenerates to `|r|`.
pub fn huber(r: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        r.abs()
    } else if r.abs() < delta {
        r * r / (2.0 * delta)
    } else {
        r.abs() - 0.5 * delta
    }
}

/// Derivative of [`huber`] with respect to the residual.
pub fn huber_grad(r: f64, delta: f64) -> f64 {
    if delta <= 0.0 {
        r.signum()
    } else {
        (r / delta).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub iso: f64,
    pub eik: f64,
    pub sem: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.iso * self.iso + w.eik * self.eik + w.sem * self.sem
    }
}

/// iso term of any scalar field over a surface batch (generic so the exact
/// mesh oracle can stand in for the net).
pub fn loss_iso_value<F: Fn(V3) -> f64>(
    field: F,
    batch: &[SurfaceSample],
    h: f64,
    delta: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("iso loss"));
    }
    let mut acc = 0.0;
    for s in batch {
        let sv = field(s.point);
        let pts = stencil_points(s.point, h);
        let vals: Vec<f64> = pts.iter().map(|&q| field(q)).collect();
        let g = stencil_gradient(&vals.try_into().unwrap(), h);
        acc += huber(sv, delta);
        for a in 0..3 {
            acc += huber(g[a] - s.normal[a], delta);
        }
    }
    Ok(acc / batch.len() as f64)
}

/// eikonal term of any scalar field over free-space points.
pub fn loss_eik_value<F: Fn(V3) -> f64>(field: F, pts: &[V3], h: f64, delta: f64) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyBatch("eikonal loss"));
    }
    let mut acc = 0.0;
    for &x in pts {
        let st = stencil_points(x, h);
        let vals: Vec<f64> = st.iter().map(|&q| field(q)).collect();
        let g = stencil_gradient(&vals.try_into().unwrap(), h);
        acc += huber(math::norm(g) - 1.0, delta);
    }
    Ok(acc / pts.len() as f64)
}

/// sem term of any warp over a surface batch with oracle correspondences.
pub fn loss_sem_value<W: Fn(V3) -> V3>(warp: W, batch: &[SurfaceSample], delta: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("semantic loss"));
    }
    let mut acc = 0.0;
    for s in batch {
        let xbar = warp(s.point);
        for a in 0..3 {
            acc += huber(xbar[a] - s.canonical[a], delta);
        }
    }
    Ok(acc / batch.len() as f64)
}

impl WNet {
    pub fn loss_iso(
        &self,
        batch: &[SurfaceSample],
        p: &ControlParams,
        h: f64,
        delta: f64,
    ) -> Result<f64> {
        loss_iso_value(
            |x| self.semantic_sdf(x, p).expect("validated params").0,
            batch,
            h,
            delta,
        )
    }

    pub fn loss_eik(&self, pts: &[V3], p: &ControlParams, h: f64, delta: f64) -> Result<f64> {
        loss_eik_value(
            |x| self.semantic_sdf(x, p).expect("validated params").0,
            pts,
            h,
            delta,
        )
    }

    pub fn loss_sem(&self, batch: &[SurfaceSample], p: &ControlParams, delta: f64) -> Result<f64> {
        loss_sem_value(|x| self.warp(x, p).expect("validated params"), batch, delta)
    }
}

/// Batched loss values and exact parameter gradient of the weighted total
/// for one posed head. Accumulates `weights`-scaled gradients into
/// `grad_acc` (length = number of MLP parameters) and returns the
/// unweighted per-term values.
pub fn stage1_loss_grad(
    net: &WNet,
    surf: &[SurfaceSample],
    off: &[V3],
    p: &ControlParams,
    weights: &LossWeights,
    h: f64,
    grad_acc: &mut [f64],
) -> Result<LossTerms> {
    if surf.is_empty() {
        return Err(Error::EmptyBatch("surface batch"));
    }
    if off.is_empty() {
        return Err(Error::EmptyBatch("off-surface batch"));
    }
    if grad_acc.len() != net.mlp.params.len() {
        return Err(Error::Dimension("gradient buffer size mismatch".into()));
    }
    let grid = &net.canonical_sdf;
    let n = surf.len();
    let m = off.len();

    // --- Surface batch: per sample, the center point then its 6 stencils.
    let mut pts = Vec::with_capacity(7 * n);
    for s in surf {
        pts.push(s.point);
        pts.extend_from_slice(&stencil_points(s.point, h));
    }
    let inputs = net.build_inputs(&pts, p)?;
    let (delta, cache) = net.mlp.forward_batch(&inputs);
    let mut cot = Array2::zeros((7 * n, 3));
    let mut iso = 0.0;
    let mut sem = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, s) in surf.iter().enumerate() {
        let base = 7 * i;
        let xbar = math::add(pts[base], [delta[(base, 0)], delta[(base, 1)], delta[(base, 2)]]);
        let (sv, g_center) = grid.query(xbar);
        iso += huber(sv, weights.delta);
        let ds = weights.iso * huber_grad(sv, weights.delta) * inv_n;
        for a in 0..3 {
            let r = xbar[a] - s.canonical[a];
            sem += huber(r, weights.delta);
            cot[(base, a)] =
                ds * g_center[a] + weights.sem * huber_grad(r, weights.delta) * inv_n;
        }
        // Stencil values and the spatial gradient they form.
        let mut sval = [0.0; 6];
        let mut sgrad = [[0.0; 3]; 6];
        for k in 0..6 {
            let r = base + 1 + k;
            let xb = math::add(pts[r], [delta[(r, 0)], delta[(r, 1)], delta[(r, 2)]]);
            let (v, gg) = grid.query(xb);
            sval[k] = v;
            sgrad[k] = gg;
        }
        let g = stencil_gradient(&sval, h);
        for a in 0..3 {
            iso += huber(g[a] - s.normal[a], weights.delta);
            let dg = weights.iso * huber_grad(g[a] - s.normal[a], weights.delta) * inv_n;
            // g_a = (s_{2a} - s_{2a+1}) / (2h)
            let dplus = dg * 0.5 / h;
            for c in 0..3 {
                cot[(base + 1 + 2 * a, c)] += dplus * sgrad[2 * a][c];
                cot[(base + 2 + 2 * a, c)] -= dplus * sgrad[2 * a + 1][c];
            }
        }
    }
    net.mlp.backward_batch_into(&cache, &cot, grad_acc);

    // --- Off-surface batch: 6 stencil rows per point.
    let mut opts = Vec::with_capacity(6 * m);
    for &x in off {
        opts.extend_from_slice(&stencil_points(x, h));
    }
    let oinputs = net.build_inputs(&opts, p)?;
    let (odelta, ocache) = net.mlp.forward_batch(&oinputs);
    let mut ocot = Array2::zeros((6 * m, 3));
    let mut eik = 0.0;
    let inv_m = 1.0 / m as f64;
    for j in 0..m {
        let base = 6 * j;
        let mut sval = [0.0; 6];
        let mut sgrad = [[0.0; 3]; 6];
        for k in 0..6 {
            let r = base + k;
            let xb = math::add(opts[r], [odelta[(r, 0)], odelta[(r, 1)], odelta[(r, 2)]]);
            let (v, gg) = grid.query(xb);
            sval[k] = v;
            sgrad[k] = gg;
        }
        let g = stencil_gradient(&sval, h);
        let gn = math::norm(g);
        eik += huber(gn - 1.0, weights.delta);
        if gn > 1e-12 {
            let scale = weights.eik * huber_grad(gn - 1.0, weights.delta) * inv_m / gn;
            for a in 0..3 {
                let dplus = scale * g[a] * 0.5 / h;
                for c in 0..3 {
                    ocot[(base + 2 * a, c)] += dplus * sgrad[2 * a][c];
                    ocot[(base + 1 + 2 * a, c)] -= dplus * sgrad[2 * a + 1][c];
                }
            }
        }
    }
    net.mlp.backward_batch_into(&ocache, &ocot, grad_acc);

    Ok(LossTerms {
        iso: iso * inv_n,
        eik: eik * inv_m,
        sem: sem * inv_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_template, pose_mesh, ModelConfig};
    use crate::mesh::{bake_sdf_grid, sample_surface, sample_volume, signed_distance, Bvh};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (WNet, crate::head::HeadModel) {
        let model = build_template(&ModelConfig {
            subdivisions: 2,
            d_alpha: 3,
            d_beta: 3,
            seed: 5,
        })
        .unwrap();
        let bbox = model.bbox.padded(0.25);
        let grid = bake_sdf_grid(&model.canonical_mesh(), bbox, 48).unwrap();
        let net = WNet::new(grid, ControlParams::canonical(3, 3), bbox, 4, &[24, 24], 11).unwrap();
        (net, model)
    }

    #[test]
    fn exact_oracle_nearly_zeroes_iso_and_eik() {
        // The true signed distance of a posed mesh drives both terms to ~0.
        let (_, model) = setup();
        let p = ControlParams::canonical(3, 3);
        let mesh = pose_mesh(&model, &p).unwrap();
        let bvh = Bvh::build(&mesh);
        let canon = mesh.clone();
        let surf = sample_surface(&mesh, &canon, 40, 77).unwrap();
        let field = |x| signed_distance(&mesh, x, Some(&bvh)).distance;
        let h = 1e-4;
        // delta = 0 keeps the exact-L1 reading for the oracle comparison.
        let iso = loss_iso_value(field, &surf, h, 0.0).unwrap();
        assert!(iso < 2e-3, "iso loss of exact SDF = {iso}");
        let vol = sample_volume(&model.bbox.padded(0.2), 60, 78);
        let eik = loss_eik_value(field, &vol, h, 0.0).unwrap();
        assert!(eik < 2e-3, "eik loss of exact SDF = {eik}");
        // Identity warp with identical canonical target zeroes sem exactly.
        let sem = loss_sem_value(|x| x, &surf, 0.0).unwrap();
        assert_eq!(sem, 0.0);
    }

    #[test]
    fn constant_offset_sem_loss_is_l1_of_offset() {
        let (_, model) = setup();
        let mesh = model.canonical_mesh();
        let surf = sample_surface(&mesh, &mesh, 25, 3).unwrap();
        let d = [0.01, -0.02, 0.005];
        let sem = loss_sem_value(|x| math::add(x, d), &surf, 0.0).unwrap();
        approx::assert_abs_diff_eq!(sem, 0.035, epsilon = 1e-12);
        // Smooth-L1 reading: 0.01 sits at the transition (0.01^2 / 0.02),
        // 0.02 is linear (0.02 - 0.005), 0.005 is quadratic (0.005^2 / 0.02).
        let sem = loss_sem_value(|x| math::add(x, d), &surf, 0.01).unwrap();
        approx::assert_abs_diff_eq!(sem, 0.005 + 0.015 + 0.00125, epsilon = 1e-12);
    }

    #[test]
    fn empty_batches_rejected() {
        let (net, _) = setup();
        let p = ControlParams::canonical(3, 3);
        let mut g = vec![0.0; net.mlp.params.len()];
        assert!(stage1_loss_grad(&net, &[], &[[0.0; 3]], &p, &LossWeights::default(), 1e-3, &mut g).is_err());
    }

    #[test]
    fn batched_values_match_scalar_path() {
        let (mut net, model) = setup();
        // Randomize the output layer so the warp is nontrivial.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for p in net.mlp.params.iter_mut() {
            *p += rng.gen_range(-0.01..0.01);
        }
        let p = ControlParams::canonical(3, 3);
        let mesh = pose_mesh(&model, &p).unwrap();
        let canon = model.canonical_mesh();
        let surf = sample_surface(&mesh, &canon, 12, 5).unwrap();
        let off = sample_volume(&net.bbox, 10, 6);
        let h = net.fd_step();
        let w = LossWeights::default();
        let mut g = vec![0.0; net.mlp.params.len()];
        let terms = stage1_loss_grad(&net, &surf, &off, &p, &w, h, &mut g).unwrap();
        approx::assert_abs_diff_eq!(
            terms.iso,
            net.loss_iso(&surf, &p, h, w.delta).unwrap(),
            epsilon = 1e-10
        );
        approx::assert_abs_diff_eq!(
            terms.eik,
            net.loss_eik(&off, &p, h, w.delta).unwrap(),
            epsilon = 1e-10
        );
        approx::assert_abs_diff_eq!(
            terms.sem,
            net.loss_sem(&surf, &p, w.delta).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let (mut net, model) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for p in net.mlp.params.iter_mut() {
            *p += rng.gen_range(-0.01..0.01);
        }
        let p = ControlParams::canonical(3, 3);
        let mesh = pose_mesh(&model, &p).unwrap();
        let canon = model.canonical_mesh();
        let surf = sample_surface(&mesh, &canon, 8, 9).unwrap();
        let off = sample_volume(&net.bbox, 6, 10);
        let w = LossWeights::default();
        let h = net.fd_step();
        let mut grad = vec![0.0; net.mlp.params.len()];
        stage1_loss_grad(&net, &surf, &off, &p, &w, h, &mut grad).unwrap();
        let loss_of = |net: &WNet| -> f64 {
            let iso = net.loss_iso(&surf, &p, h, w.delta).unwrap();
            let eik = net.loss_eik(&off, &p, h, w.delta).unwrap();
            let sem = net.loss_sem(&surf, &p, w.delta).unwrap();
            LossTerms { iso, eik, sem }.total(&w)
        };
        let hp = 1e-6;
        let mut checked = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        while checked < 40 {
            let i = rng.gen_range(0..net.mlp.params.len());
            let orig = net.mlp.params[i];
            net.mlp.params[i] = orig + hp;
            let lp = loss_of(&net);
            net.mlp.params[i] = orig - hp;
            let lm = loss_of(&net);
            net.mlp.params[i] = orig;
            let fd = (lp - lm) / (2.0 * hp);
            let denom = fd.abs().max(grad[i].abs());
            if denom < 1e-7 {
                continue; // dead parameter, nothing to compare
            }
            assert!(
                ((grad[i] - fd) / denom).abs() < 5e-4,
                "param {i}: analytic {} vs fd {}",
                grad[i],
                fd
            );
            checked += 1;
        }
    }
}
