//! Versioned JSON metrics report shared by every command.

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One report per command run. Metrics a command does not produce stay
/// `None`; everything present must be finite.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Command that produced the report.
    pub command: String,
    /// Seed(s) the run was keyed on.
    pub seed: u64,
    /// Wall-clock runtime, seconds.
    pub runtime_s: f64,
    /// Free-form provenance string (config digest, package version).
    pub provenance: String,
    /// Set when the producing run hit its divergence guard.
    pub diverged: bool,
    /// Set when an estimator-based metric exceeded its failure budget.
    pub flagged: bool,

    pub sdf_mae: Option<f64>,
    pub eikonal_residual: Option<f64>,
    pub sem_surface_err: Option<f64>,
    pub identity_err: Option<f64>,
    pub silhouette_iou: Option<f64>,
    pub photometric_l1: Option<f64>,
    pub asd: Option<f64>,
    pub aed: Option<f64>,
    pub ds_alpha: Option<f64>,
    pub ds_beta_theta: Option<f64>,
    pub ds_camera: Option<f64>,
}

impl MetricsReport {
    pub fn new(command: &str, seed: u64) -> Self {
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            ..Default::default()
        }
    }

    /// Every populated metric must be finite and the schema version must
    /// match this build.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema {} unsupported (expected {})",
                self.schema_version, REPORT_SCHEMA_VERSION
            )));
        }
        let all = [
            self.sdf_mae,
            self.eikonal_residual,
            self.sem_surface_err,
            self.identity_err,
            self.silhouette_iou,
            self.photometric_l1,
            self.asd,
            self.aed,
            self.ds_alpha,
            self.ds_beta_theta,
            self.ds_camera,
            Some(self.runtime_s),
        ];
        if all.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metrics report"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rep: MetricsReport =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        rep.validate()?;
        Ok(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let mut r = MetricsReport::new("eval-sdf", 7);
        r.sdf_mae = Some(0.01);
        r.provenance = "test".into();
        let json = r.to_json().unwrap();
        let back = MetricsReport::from_json(&json).unwrap();
        assert_eq!(back.sdf_mae, Some(0.01));
        assert_eq!(back.command, "eval-sdf");

        r.sdf_mae = Some(f64::NAN);
        assert!(r.to_json().is_err());

        let mut bad = MetricsReport::new("x", 0);
        bad.schema_version = 99;
        assert!(bad.validate().is_err());
    }
}
