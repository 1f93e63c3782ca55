//! Procedural FLAME-like parametric head.
//!
//! Linear shape/expression blendshapes on a watertight template, two skinned
//! 3-DoF joints (neck, then a jaw hinged below it), barycentric landmark
//! regression, pinhole projection and nonlinear landmark-based parameter
//! fitting. The template is generated procedurally so the repo is
//! self-contained; externally supplied bases load through the same binary
//! model format.
//!
//! # Example
//!
//! Opening the jaw moves jaw-weighted vertices but leaves the crown in place:
//!
//! ```
//! use omnihead::head::{build_template, pose_mesh, ModelConfig};
//!
//! let model = build_template(&ModelConfig { d_alpha: 4, d_beta: 4, subdivisions: 2, seed: 3 })?;
//! let mut p = model.canonical_params();
//! let closed = pose_mesh(&model, &p)?;
//! p.theta[3] += 0.3; // jaw hinge, radians
//! let open = pose_mesh(&model, &p)?;
//!
//! let moved: Vec<f64> = closed.vertices.iter().zip(&open.vertices)
//!     .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum())
//!     .collect();
//! // The vertex most strongly skinned to the jaw swings with the hinge; the
//! // crown (highest vertex) carries no jaw weight and stays put.
//! let chin = (0..moved.len())
//!     .max_by(|&a, &b| model.skin_weights[a][1].total_cmp(&model.skin_weights[b][1]))
//!     .unwrap();
//! let crown = closed.vertices.iter().enumerate().max_by(|a, b| a.1[1].total_cmp(&b.1[1])).unwrap().0;
//! assert!(moved[chin] > 1e-3);
//! assert!(moved[crown] < 1e-9);
//! # Ok::<(), omnihead::Error>(())
//! ```

mod camera;
mod fit;
mod pose;
mod template;

pub use camera::Camera;
pub use fit::{fit_landmarks, FitOptions, FitResult};
pub use pose::{landmarks3d, landmarks3d_jacobian, pose_mesh, pose_vertices_jacobian};
pub use template::{build_template, icosphere, ModelConfig};

use crate::error::{Error, Result};
use crate::math::V3;
use crate::mesh::{Aabb, Mesh};

/// Canonical jaw opening angle, radians (10 degrees about the hinge axis).
pub const CANONICAL_JAW_RAD: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// The full control vector p = (alpha, beta, theta).
///
/// `theta` is axis-angle, neck joint first (3) then jaw (3), radians.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControlParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: [f64; 6],
}

impl ControlParams {
    pub fn zeros(d_alpha: usize, d_beta: usize) -> Self {
        ControlParams {
            alpha: vec![0.0; d_alpha],
            beta: vec![0.0; d_beta],
            theta: [0.0; 6],
        }
    }

    /// The canonical configuration: neutral shape and expression, zero neck,
    /// jaw open 10 degrees.
    pub fn canonical(d_alpha: usize, d_beta: usize) -> Self {
        let mut p = Self::zeros(d_alpha, d_beta);
        p.theta[3] = CANONICAL_JAW_RAD;
        p
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + self.beta.len() + 6
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).chain(&self.theta).all(|v| v.is_finite())
    }

    /// Flat layout [alpha, beta, theta] used by the fitter and the warp net.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.theta);
        v
    }

    pub fn from_flat(flat: &[f64], d_alpha: usize, d_beta: usize) -> Result<Self> {
        if flat.len() != d_alpha + d_beta + 6 {
            return Err(Error::Dimension(format!(
                "flat control vector has {} entries, expected {}",
                flat.len(),
                d_alpha + d_beta + 6
            )));
        }
        Ok(ControlParams {
            alpha: flat[..d_alpha].to_vec(),
            beta: flat[d_alpha..d_alpha + d_beta].to_vec(),
            theta: flat[d_alpha + d_beta..].try_into().unwrap(),
        })
    }
}

/// A barycentric landmark anchor on the template.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LandmarkAnchor {
    pub face: u32,
    pub barycentric: [f64; 3],
}

/// Template + blendshape bases + skinning weights + landmark definition.
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct HeadModel {
    pub template: Mesh,
    /// Shape basis, `d_alpha` displacement fields of V vertices each.
    pub shape_basis: Vec<Vec<V3>>,
    /// Expression basis, `d_beta` displacement fields.
    pub expr_basis: Vec<Vec<V3>>,
    /// Per-vertex (neck, jaw) weights; the residual 1 - w_n - w_j goes to the root.
    pub skin_weights: Vec<[f64; 2]>,
    /// Rest positions of the neck and jaw joints.
    pub joints: [V3; 2],
    pub landmarks: Vec<LandmarkAnchor>,
    pub bbox: Aabb,
}

impl HeadModel {
    pub fn d_alpha(&self) -> usize {
        self.shape_basis.len()
    }

    pub fn d_beta(&self) -> usize {
        self.expr_basis.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.template.vertices.len()
    }

    pub fn n_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn canonical_params(&self) -> ControlParams {
        ControlParams::canonical(self.d_alpha(), self.d_beta())
    }

    /// Canonical mesh: the template posed at the canonical parameters.
    pub fn canonical_mesh(&self) -> Mesh {
        pose_mesh(self, &self.canonical_params()).expect("canonical params are valid")
    }

    pub fn check_params(&self, p: &ControlParams) -> Result<()> {
        if p.alpha.len() != self.d_alpha() || p.beta.len() != self.d_beta() {
            return Err(Error::Dimension(format!(
                "control dims ({}, {}) do not match model ({}, {})",
                p.alpha.len(),
                p.beta.len(),
                self.d_alpha(),
                self.d_beta()
            )));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("control parameters"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.template.check_watertight()?;
        let v = self.n_vertices();
        for basis in self.shape_basis.iter().chain(&self.expr_basis) {
            if basis.len() != v {
                return Err(Error::Dimension("basis length != vertex count".into()));
            }
            if !basis.iter().all(|d| crate::math::finite(*d)) {
                return Err(Error::NonFinite("blendshape basis"));
            }
        }
        if self.skin_weights.len() != v {
            return Err(Error::Dimension("skinning weight length != vertex count".into()));
        }
        for w in &self.skin_weights {
            if !(0.0..=1.0).contains(&w[0]) || !(0.0..=1.0).contains(&w[1]) || w[0] + w[1] > 1.0 + 1e-12 {
                return Err(Error::Config(format!("invalid skinning weights {w:?}")));
            }
        }
        Ok(())
    }
}
