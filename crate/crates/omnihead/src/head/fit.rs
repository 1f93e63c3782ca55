//! Levenberg-Marquardt landmark-based parameter fitting.
//!
//! Minimizes pixel reprojection error of the 3D landmarks plus a Tikhonov
//! prior on the shape and expression coefficients. The camera stays fixed.

use super::{landmarks3d, landmarks3d_jacobian, Camera, ControlParams, HeadModel};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Weight of the squared-coefficient prior on alpha and beta.
    pub prior_weight: f64,
    /// Stop when the objective improves by less than this, relatively.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 100,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 1.0 / 3.0,
            prior_weight: 1e-2,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub params: ControlParams,
    /// RMS of the pixel reprojection residual (prior excluded).
    pub rms_pixels: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final damped objective (pixel + prior residual sum of squares).
    pub objective: f64,
}

/// Residual vector: 2K pixel residuals followed by the prior residuals.
/// Invalid (behind-camera) landmarks contribute zero.
fn residuals(
    model: &HeadModel,
    cam: &Camera,
    observed: &[[f64; 2]],
    p: &ControlParams,
    prior_w: f64,
) -> Result<DVector<f64>> {
    let lms = landmarks3d(model, p)?;
    let k = lms.len();
    let n_prior = p.alpha.len() + p.beta.len();
    let mut r = DVector::zeros(2 * k + n_prior);
    for (i, lm) in lms.iter().enumerate() {
        if let Some(px) = cam.project_point(*lm) {
            r[2 * i] = px[0] - observed[i][0];
            r[2 * i + 1] = px[1] - observed[i][1];
        }
    }
    let sw = prior_w.sqrt();
    for (j, &a) in p.alpha.iter().chain(&p.beta).enumerate() {
        r[2 * k + j] = sw * a;
    }
    Ok(r)
}

fn jacobian(
    model: &HeadModel,
    cam: &Camera,
    p: &ControlParams,
    prior_w: f64,
) -> DMatrix<f64> {
    let lm_jac = landmarks3d_jacobian(model, p);
    let lms = landmarks3d(model, p).expect("params validated by caller");
    let k = lms.len();
    let dim = p.dim();
    let n_prior = p.alpha.len() + p.beta.len();
    let mut j = DMatrix::zeros(2 * k + n_prior, dim);
    for (i, lm) in lms.iter().enumerate() {
        if let Some(rows) = cam.project_jacobian(*lm) {
            for col in 0..dim {
                let d3 = lm_jac[i][col];
                for axis in 0..2 {
                    j[(2 * i + axis, col)] =
                        rows[axis][0] * d3[0] + rows[axis][1] * d3[1] + rows[axis][2] * d3[2];
                }
            }
        }
    }
    let sw = prior_w.sqrt();
    for col in 0..n_prior {
        j[(2 * k + col, col)] = sw;
    }
    j
}

/// Fits control parameters to observed 2D landmarks. Deterministic; reports
/// a non-convergence flag instead of failing when the iteration cap is hit.
pub fn fit_landmarks(
    model: &HeadModel,
    cam: &Camera,
    observed: &[[f64; 2]],
    init: &ControlParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    if observed.len() != model.n_landmarks() {
        return Err(Error::Dimension(format!(
            "{} observations for {} landmarks",
            observed.len(),
            model.n_landmarks()
        )));
    }
    model.check_params(init)?;
    let d_alpha = model.d_alpha();
    let d_beta = model.d_beta();
    let dim = init.dim();
    let k = model.n_landmarks();

    let mut p = init.clone();
    let mut lambda = opts.lambda_init;
    let mut r = residuals(model, cam, observed, &p, opts.prior_weight)?;
    let mut objective = r.norm_squared();
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..opts.max_iters {
        iters += 1;
        let j = jacobian(model, cam, &p, opts.prior_weight);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        if jtr.norm() < 1e-12 {
            converged = true;
            break;
        }
        // Accept the first damped step that decreases the objective,
        // escalating the damping when the normal equations are singular or
        // the step fails.
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..dim {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= opts.lambda_up;
                    continue;
                }
            };
            let flat: Vec<f64> = p
                .to_flat()
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + b)
                .collect();
            let cand = ControlParams::from_flat(&flat, d_alpha, d_beta)?;
            if !cand.is_finite() {
                lambda *= opts.lambda_up;
                continue;
            }
            let r_cand = residuals(model, cam, observed, &cand, opts.prior_weight)?;
            let obj_cand = r_cand.norm_squared();
            if obj_cand < objective {
                let rel_gain = (objective - obj_cand) / objective.max(1e-300);
                p = cand;
                r = r_cand;
                objective = obj_cand;
                lambda = (lambda * opts.lambda_down).max(1e-12);
                accepted = true;
                if rel_gain < opts.rel_tol {
                    converged = true;
                }
                break;
            }
            lambda *= opts.lambda_up;
        }
        if !accepted || converged {
            converged = converged || !accepted && objective < 1e-18 * (2 * k) as f64;
            // A rejected step after full damping escalation means we are at a
            // (possibly local) minimum.
            if !accepted {
                converged = true;
            }
            break;
        }
    }

    let pixel_ss: f64 = (0..2 * k).map(|i| r[i] * r[i]).sum();
    Ok(FitResult {
        params: p,
        rms_pixels: (pixel_ss / (2 * k) as f64).sqrt(),
        converged,
        iterations: iters,
        objective,
    })
}
