//! Campaign configuration: one JSON document drives predict, simulate,
//! analyze and calibrate. Defaults describe the no-filter operating point
//! (13.6-13.8 kc/s singles, ~515/s coincidences, 9.4%/12% background
//! fractions at 8.4%/8.2% efficiency) so the out-of-the-box campaign
//! exercises the full pipeline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorParams;
use crate::error::{Error, Result};
use crate::pairstats::{DipShape, FringeModel, OverlapModel};
use crate::simkit::{ScanPlan, SeedPolicy, SourceParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Detector configuration; adds the efficiency uncertainty used by the
/// closed-form prediction on top of the simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    #[serde(default)]
    pub efficiency_err: f64,
    pub background_rate: f64,
    pub label: String,
}

impl DetectorConfig {
    pub fn params(&self) -> DetectorParams {
        DetectorParams {
            efficiency: self.efficiency,
            background_rate: self.background_rate,
            label: self.label.clone(),
        }
    }
}

/// Closed-iris calibration geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Transmission of the nearly closed iris on the heralding arm; the
    /// default is the area ratio of a 2 mm iris to the 8 mm running iris.
    pub iris_transmission: f64,
    /// Accumulation time per estimated detector, seconds.
    pub duration_s: f64,
    /// Delay setting during calibration; far outside the dip.
    pub delay_fs: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            iris_transmission: 1.0 / 16.0,
            duration_s: 600.0,
            delay_fs: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    pub source: SourceParams,
    pub overlap: OverlapModel,
    pub detector_a: DetectorConfig,
    pub detector_b: DetectorConfig,
    pub plan: ScanPlan,
    pub seed: u64,
    /// Neutral-density transmissions for the filter series.
    #[serde(default = "default_nd_series")]
    pub nd_series: Vec<f64>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    /// Fractional systematic uncertainty on measured backgrounds.
    #[serde(default = "default_background_syst_frac")]
    pub background_syst_frac: f64,
    /// Transmission applied to detector B for this campaign (1.0 = no filter).
    #[serde(default = "default_nd_transmission")]
    pub nd_transmission: f64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

fn default_nd_series() -> Vec<f64> {
    vec![1.0, 0.8, 0.57, 0.27]
}

fn default_background_syst_frac() -> f64 {
    0.20
}

fn default_nd_transmission() -> f64 {
    1.0
}

fn default_out_dir() -> String {
    "out".into()
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            schema_version: SCHEMA_VERSION,
            source: SourceParams {
                pair_rate: 149_832.3,
                drift: 0.10,
                fringes: FringeModel::default(),
                hidden_background_scale: 1.0,
                accidental_window_s: None,
            },
            overlap: OverlapModel {
                peak: 0.394,
                center_fs: 0.0,
                width_fs: 8.5,
                shape: DipShape::Gaussian,
            },
            detector_a: DetectorConfig {
                efficiency: 0.084,
                efficiency_err: 0.011,
                background_rate: 1278.4,
                label: "Alice".into(),
            },
            detector_b: DetectorConfig {
                efficiency: 0.0818,
                efficiency_err: 0.011,
                background_rate: 1637.1,
                label: "Bob".into(),
            },
            plan: ScanPlan {
                n_points: 280,
                dwell_s: 1.0,
                // 0.445 fs steps: the fringe half-period lands on bin 3.
                delay_min_fs: -62.0775,
                delay_max_fs: 62.0775,
                n_scans: 25,
                alternate_directions: true,
            },
            seed: 1,
            nd_series: default_nd_series(),
            calibration: CalibrationConfig::default(),
            background_syst_frac: default_background_syst_frac(),
            nd_transmission: 1.0,
            out_dir: default_out_dir(),
        }
    }
}

impl CampaignConfig {
    /// Validate every sub-model, collecting one message per offending field.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            issues.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        let mut check = |prefix: &str, result: Result<()>| {
            if let Err(e) = result {
                issues.push(format!("{prefix}: {e}"));
            }
        };
        check("source", self.source.validate());
        check("overlap", self.overlap.validate());
        check("detector_a", self.detector_a.params().validate());
        check("detector_b", self.detector_b.params().validate());
        check("plan", self.plan.validate());
        for (name, err) in [
            ("detector_a.efficiency_err", self.detector_a.efficiency_err),
            ("detector_b.efficiency_err", self.detector_b.efficiency_err),
        ] {
            if !(err >= 0.0) {
                issues.push(format!("{name}: must be >= 0, got {err}"));
            }
        }
        if !(self.calibration.iris_transmission > 0.0 && self.calibration.iris_transmission <= 1.0)
        {
            issues.push(format!(
                "calibration.iris_transmission: must be in (0, 1], got {}",
                self.calibration.iris_transmission
            ));
        }
        if !(self.calibration.duration_s > 0.0) {
            issues.push(format!(
                "calibration.duration_s: must be > 0, got {}",
                self.calibration.duration_s
            ));
        }
        if !(0.0..=1.0).contains(&self.background_syst_frac) {
            issues.push(format!(
                "background_syst_frac: must be in [0, 1], got {}",
                self.background_syst_frac
            ));
        }
        for &t in &self.nd_series {
            if !(t > 0.0 && t <= 1.0) {
                issues.push(format!(
                    "nd_series: transmissions must be in (0, 1], got {t}"
                ));
            }
        }
        if !(self.nd_transmission > 0.0 && self.nd_transmission <= 1.0) {
            issues.push(format!(
                "nd_transmission: must be in (0, 1], got {}",
                self.nd_transmission
            ));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig { issues })
        }
    }

    pub fn seed_policy(&self) -> SeedPolicy {
        SeedPolicy::new(self.seed)
    }

    /// This campaign with a neutral-density filter on detector B.
    pub fn with_nd_transmission(&self, transmission: f64) -> Result<CampaignConfig> {
        let filtered = crate::simkit::apply_nd_filter(&self.detector_b.params(), transmission)?;
        let mut config = self.clone();
        config.detector_b.efficiency = filtered.efficiency;
        config.detector_b.background_rate = filtered.background_rate;
        config.nd_transmission = self.nd_transmission * transmission;
        Ok(config)
    }

    pub fn from_json(json: &str) -> Result<CampaignConfig> {
        let config: CampaignConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<CampaignConfig> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Atomic write of the config echo next to campaign data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json_pretty()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
