//! Pipeline configuration: one JSON document, nested by stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::DEFAULT_ISO_THRESHOLD;
use crate::lidar::{AngleConvention, ExclusionZone, TargetPolicy};
use crate::thermal::ThermalConfig;
use crate::tracker::{KalmanConfig, TrackerError};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthUpdate {
    /// Each refresh overwrites the real length.
    Latest,
    /// Real length is the mean of every cut length accepted so far.
    #[default]
    RunningMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub zones: Vec<ExclusionZone>,
    /// Largest range step between neighbouring beams of one segment, mm.
    pub gap_mm: f64,
    pub min_points: usize,
    /// Expected beam density; scans with another density are rejected.
    pub points_per_degree: u32,
    pub angle_convention: AngleConvention,
    pub target: TargetPolicy,
    /// Refresh the active camera's calibration from LIDAR segments.
    pub recalibrate: bool,
    /// Convert the measured range to depth along the camera's optical axis.
    pub project_to_optical_axis: bool,
    /// Scan bearing of the camera's optical axis, degrees.
    pub forward_bearing_deg: f64,
    /// How refreshed cut lengths replace the calibrated real length.
    pub length_update: LengthUpdate,
    /// Largest disagreement between segment bearing and the tracked box's
    /// bearing for a recalibration to be accepted, degrees.
    pub bearing_gate_deg: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            zones: Vec::new(),
            gap_mm: 100.0,
            min_points: 10,
            points_per_degree: 4,
            angle_convention: AngleConvention::AsPrinted,
            target: TargetPolicy::Nearest,
            recalibrate: true,
            project_to_optical_axis: true,
            forward_bearing_deg: 90.0,
            bearing_gate_deg: 10.0,
            length_update: LengthUpdate::RunningMean,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub iso_threshold: u32,
    /// Monocular detections scoring below this are ignored.
    pub min_score: f64,
    pub tracker: KalmanConfig,
    pub thermal: ThermalConfig,
    pub lidar: LidarConfig,
    /// Calibration file, relative paths resolved against the config file.
    pub calibration: Option<PathBuf>,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iso_threshold: DEFAULT_ISO_THRESHOLD,
            min_score: 0.8,
            tracker: KalmanConfig::default(),
            thermal: ThermalConfig::default(),
            lidar: LidarConfig::default(),
            calibration: None,
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| parse_err(e.to_string()))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if let (Some(c), Some(dir)) = (&cfg.calibration, path.parent()) {
            if c.is_relative() {
                cfg.calibration = Some(dir.join(c));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field; the error names the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(invalid("min_score", format!("{} outside [0, 1]", self.min_score)));
        }
        self.tracker.validate().map_err(|e| match e {
            TrackerError::InvalidConfig(msg) => {
                let key = msg.split_whitespace().next().unwrap_or("tracker").to_string();
                ConfigError::Invalid { key, reason: msg }
            }
            other => invalid("tracker", other.to_string()),
        })?;

        let th = &self.thermal;
        for (key, bias) in ["thermal.center_bias_px[0]", "thermal.center_bias_px[1]"].iter().zip(th.center_bias_px) {
            if !bias.is_finite() {
                return Err(invalid(key, "must be finite"));
            }
        }
        if th.open_radius > 32 || th.close_radius > 32 {
            return Err(invalid("thermal.open_radius/close_radius", "radius above 32 px"));
        }

        let l = &self.lidar;
        if !(l.gap_mm > 0.0 && l.gap_mm.is_finite()) {
            return Err(invalid("lidar.gap_mm", format!("{} must be > 0", l.gap_mm)));
        }
        if l.min_points < 1 {
            return Err(invalid("lidar.min_points", "must be >= 1"));
        }
        if l.points_per_degree < 1 {
            return Err(invalid("lidar.points_per_degree", "must be >= 1"));
        }
        if !(l.bearing_gate_deg > 0.0) {
            return Err(invalid("lidar.bearing_gate_deg", "must be > 0"));
        }
        if !l.forward_bearing_deg.is_finite() {
            return Err(invalid("lidar.forward_bearing_deg", "must be finite"));
        }
        for (i, z) in l.zones.iter().enumerate() {
            // Beam bounds are checked against the scan layout at run time.
            z.validate(usize::MAX).map_err(|e| invalid(&format!("lidar.zones[{i}]"), e.to_string()))?;
        }
        match l.target {
            TargetPolicy::ExpectedLength { length_mm } if !(length_mm > 0.0) => {
                return Err(invalid("lidar.target.length_mm", "must be > 0"));
            }
            _ => {}
        }
        Ok(())
    }
}
