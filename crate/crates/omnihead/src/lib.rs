//! Geometry-guided controllable head synthesis at desk scale.
//!
//! The crate couples a procedural parametric head model with a learned
//! semantic signed-distance/correspondence field and a correspondence-guided
//! volume renderer, all verified against exact geometric oracles.
//!
//! # Quick start
//!
//! Build a small head model, pose it, and render a geometry-only
//! silhouette through an (untrained, identity-warp) semantic SDF:
//!
//! ```
//! use omnihead::head::{build_template, Camera, ModelConfig};
//! use omnihead::mesh::bake_sdf_grid;
//! use omnihead::render::{render, DensityPrior, RenderMode, RenderOpts};
//! use omnihead::wfield::WNet;
//!
//! let model = build_template(&ModelConfig {
//!     d_alpha: 4, d_beta: 4, subdivisions: 2, seed: 3,
//! })?;
//! let bbox = model.bbox.padded(0.25);
//! let grid = bake_sdf_grid(&model.canonical_mesh(), bbox, 32)?;
//! let wnet = WNet::new(grid, model.canonical_params(), bbox, 4, &[24, 24], 0)?;
//!
//! let focal = 1.2 * 24.0 / model.bbox.diagonal();
//! let cam = Camera::look_at([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], focal, 24, 24)?;
//! let opts = RenderOpts {
//!     width: 24, height: 24, n_samples: 24,
//!     mode: RenderMode::SigmaOverride,
//!     ..RenderOpts::default()
//! };
//! let prior = DensityPrior::new(5e-3, 50.0)?;
//! let out = render(&wnet, None, &prior, &cam, &model.canonical_params(), &opts)?;
//!
//! // The head covers the image center but not the corners.
//! assert!(out.opacity.at(12, 12, 0) > 0.5);
//! assert!(out.opacity.at(0, 0, 0) < 0.5);
//! # Ok::<(), omnihead::Error>(())
//! ```

pub mod error;
pub mod eval;
pub mod field;
pub mod head;
pub mod io;
pub mod nn;
pub mod math;
pub mod mesh;
pub mod render;
pub mod wfield;

pub use error::{Error, Result};
