//! Control-consistency loss: how far an estimated expression/pose sits from
//! the target controls, measured both in coefficient space and through the
//! geometry it produces.

use crate::error::Result;
use crate::head::{landmarks3d, pose_mesh, ControlParams, HeadModel};
use crate::math;

/// Per-term breakdown of the control loss. Identity coefficients are
/// excluded on purpose: the estimator only observes expression and pose.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ControlLoss {
    /// Mean |beta_est - beta_target|.
    pub beta: f64,
    /// Mean |theta_est - theta_target| (radians).
    pub theta: f64,
    /// Mean vertex L1 distance between the two posed meshes, meters.
    pub vertex: f64,
    /// Mean 3D landmark L1 distance, meters.
    pub landmark: f64,
}

impl ControlLoss {
    pub fn total(&self) -> f64 {
        self.beta + self.theta + self.vertex + self.landmark
    }
}

/// Compares `estimate` against `target`. Both meshes are posed with the
/// *target* identity so the geometric terms isolate expression and pose.
/// Zero in every term exactly when the estimated beta and theta equal the
/// target's.
pub fn loss_control(
    model: &HeadModel,
    estimate: &ControlParams,
    target: &ControlParams,
) -> Result<ControlLoss> {
    model.check_params(estimate)?;
    model.check_params(target)?;
    let mut est = estimate.clone();
    est.alpha = target.alpha.clone();

    let beta = mean_abs_diff(&est.beta, &target.beta);
    let theta = mean_abs_diff(&est.theta, &target.theta);

    let mesh_e = pose_mesh(model, &est)?;
    let mesh_t = pose_mesh(model, target)?;
    let vertex = mesh_e
        .vertices
        .iter()
        .zip(&mesh_t.vertices)
        .map(|(&a, &b)| l1(a, b))
        .sum::<f64>()
        / mesh_e.vertices.len() as f64;

    let lm_e = landmarks3d(model, &est)?;
    let lm_t = landmarks3d(model, target)?;
    let landmark = lm_e
        .iter()
        .zip(&lm_t)
        .map(|(&a, &b)| l1(a, b))
        .sum::<f64>()
        / lm_e.len() as f64;

    Ok(ControlLoss {
        beta,
        theta,
        vertex,
        landmark,
    })
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn l1(a: math::V3, b: math::V3) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{build_template, ModelConfig};

    fn model() -> HeadModel {
        build_template(&ModelConfig {
            subdivisions: 2,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_exactly_at_target() {
        let m = model();
        let mut target = m.canonical_params();
        target.alpha[1] = 0.7;
        target.beta[2] = -0.4;
        target.theta[0] = 0.1;
        let loss = loss_control(&m, &target, &target).unwrap();
        assert_eq!(loss.beta, 0.0);
        assert_eq!(loss.theta, 0.0);
        assert_eq!(loss.vertex, 0.0);
        assert_eq!(loss.landmark, 0.0);
        assert_eq!(loss.total(), 0.0);
    }

    #[test]
    fn identity_mismatch_is_ignored() {
        let m = model();
        let target = m.canonical_params();
        let mut est = target.clone();
        est.alpha[0] = 2.0; // different identity, same beta/theta
        let loss = loss_control(&m, &est, &target).unwrap();
        assert_eq!(loss.total(), 0.0);
    }

    #[test]
    fn grows_with_expression_and_pose_error() {
        let m = model();
        let target = m.canonical_params();
        let mut small = target.clone();
        small.beta[0] = 0.2;
        let mut large = target.clone();
        large.beta[0] = 1.0;
        large.theta[4] = 0.1;
        let ls = loss_control(&m, &small, &target).unwrap();
        let ll = loss_control(&m, &large, &target).unwrap();
        assert!(ls.total() > 0.0);
        assert!(ll.total() > ls.total());
        assert!(ll.vertex > 0.0 && ll.landmark > 0.0);
    }
}
