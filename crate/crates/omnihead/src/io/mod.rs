//! On-disk artifacts: little-endian binary containers, ASCII PLY, PNG and
//! float-map images, INI-style configuration, JSON reports.
//!
//! Formats (all little-endian, magic-tagged):
//! - `PHM1`: parametric head model (template, bases, skinning, landmarks).
//! - `SDG1`: baked signed-distance grid.
//! - `SMB1`: archives of per-head sample batches.
//! - `CKP1`: checkpoints as a named-blob table (MLP weights, grids,
//!   optimizer state, feature planes).
//! - `IMG1`: float32 image maps (depth, opacity).
//!
//! # Example
//!
//! Checkpoints round-trip typed blobs byte-exactly:
//!
//! ```
//! use omnihead::io::Checkpoint;
//!
//! let dir = tempfile::tempdir().unwrap();
//! let path = dir.path().join("demo.ckp");
//! let mut ck = Checkpoint::new();
//! ck.put_f64("weights", vec![1.5, -2.25]);
//! ck.put_u64("step", vec![42]);
//! ck.save(&path)?;
//!
//! let back = Checkpoint::load(&path)?;
//! assert_eq!(back, ck);
//! assert_eq!(back.scalar_u64("step")?, 42);
//! # Ok::<(), omnihead::Error>(())
//! ```

mod binfmt;
mod checkpoint;
mod grid;
mod image_io;
mod ini;
mod model;
mod ply;
mod samples;

pub use checkpoint::{Blob, Checkpoint};
pub use grid::{load_sdf_grid, save_sdf_grid};
pub use image_io::{load_float_map, save_float_map, save_png_gray, save_png_rgb, FloatMap};
pub use ini::Ini;
pub use model::{load_head_model, save_head_model};
pub use ply::write_ply;
pub use samples::{load_sample_archive, save_sample_archive, SampleBatch};

use crate::error::{Error, Result};
use std::path::Path;

/// Refuses to clobber an existing file unless `force` is set.
pub fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.display().to_string()));
    }
    Ok(())
}

/// Maps a missing input artifact to a dedicated error.
pub fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    Ok(())
}
