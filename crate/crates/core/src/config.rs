//! Pipeline configuration: one section per module, every field defaulted.

use serde::{Deserialize, Serialize};

use crate::bikac::KacParams;
use crate::error::{Error, Result};
use crate::geomcon::ConstraintTolerances;
use crate::hmsr::HmsrConfig;
use crate::saliency::GraspDetectorConfig;
use crate::vmp::VmpConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Odd Savitzky-Golay window in frames.
    pub sg_window: usize,
    pub sg_polyorder: usize,
    /// Robust z-score above which a point is masked as an outlier.
    pub outlier_z: f64,
    /// Resample every demo to this many frames first, if set.
    pub resample: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { sg_window: 7, sg_polyorder: 2, outlier_z: 3.5, resample: None }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::config("trajdata", reason));
        if self.sg_window < 3 || self.sg_window % 2 == 0 {
            return bad(format!("sg_window must be odd and >= 3, got {}", self.sg_window));
        }
        if self.sg_polyorder >= self.sg_window {
            return bad(format!("sg_polyorder {} must be < sg_window {}", self.sg_polyorder, self.sg_window));
        }
        if !(self.outlier_z > 0.0) {
            return bad(format!("outlier_z must be > 0, got {}", self.outlier_z));
        }
        if self.resample.is_some_and(|t| t < self.sg_window) {
            return bad("resample must be >= sg_window".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    /// Static threshold relative to scene scale per demo duration.
    pub rel_thresh: f64,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig { rel_thresh: 0.05 }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_thresh > 0.0 && self.rel_thresh.is_finite()) {
            return Err(Error::config("saliency", format!("rel_thresh must be > 0, got {}", self.rel_thresh)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub saliency: SaliencyConfig,
    pub grasp: GraspDetectorConfig,
    pub geomcon: ConstraintTolerances,
    pub hmsr: HmsrConfig,
    pub vmp: VmpConfig,
    pub bikac: KacParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.saliency.validate()?;
        self.grasp.validate()?;
        self.geomcon.validate()?;
        self.hmsr.validate()?;
        self.vmp.validate()?;
        self.bikac.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn range_errors_name_the_module() {
        let mut c = PipelineConfig::default();
        c.hmsr.end_fraction = 2.0;
        assert!(c.validate().unwrap_err().to_string().contains("[hmsr]"));
        let mut c = PipelineConfig::default();
        c.preprocess.sg_window = 4;
        assert!(c.validate().unwrap_err().to_string().contains("[trajdata]"));
        let mut c = PipelineConfig::default();
        c.vmp.n_basis = 0;
        assert!(c.validate().unwrap_err().to_string().contains("[vmp]"));
    }

    #[test]
    fn json_round_trip() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"hmsr": {"bogus": 1}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"extra": {}}"#).is_err());
        let partial: PipelineConfig = serde_json::from_str(r#"{"geomcon": {"budget": 5}}"#).unwrap();
        assert_eq!(partial.geomcon.budget, 5);
    }
}
