//! Sensor mode switch, pixel-to-world conversion and velocity estimation.
//!
//! A box center `C_P` (pixels, center origin) becomes an image-plane point in
//! millimeters by scaling with `L / l`, the real object length over its pixel
//! length. Depth follows from one calibration pair: the object length in
//! pixels is inversely proportional to its distance, so
//! `D_i = D_c * l_c / l_i`.

mod pipeline;

use std::fmt;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pipeline::{find_calibrations, run_pipeline, BranchStats, PipelineError, PipelineOutput, RunOptions};

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("object pixel length {0} must be positive")]
    ZeroPixelLength(f64),
    #[error("time step {0} s is not positive")]
    NonPositiveDt(f64),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
}

/// Which camera branch handles a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    #[serde(rename = "mono")]
    Monocular,
    Thermal,
}

impl SensorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorMode::Monocular => "mono",
            SensorMode::Thermal => "thermal",
        }
    }
}

impl fmt::Display for SensorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SensorMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mono" => Ok(SensorMode::Monocular),
            "thermal" => Ok(SensorMode::Thermal),
            other => Err(format!("unknown sensor mode {other:?}")),
        }
    }
}

/// Default ISO above which the monocular camera is considered unreliable.
pub const DEFAULT_ISO_THRESHOLD: u32 = 6400;

/// `iso < threshold` runs the monocular branch; everything else runs thermal.
pub fn select_mode(iso: u32, threshold: u32) -> SensorMode {
    if iso < threshold {
        SensorMode::Monocular
    } else {
        SensorMode::Thermal
    }
}

/// Rigid placement of the camera in the global frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Mount {
    pub dx: f64,
    pub dy: f64,
    /// Mounting height, mm.
    pub dz: f64,
    /// Rotation about the global vertical axis, degrees.
    pub yaw_deg: f64,
}

/// Distance/pixel-length/real-length triple anchoring depth estimation for one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub mode: SensorMode,
    /// Calibrated distance `D_c`, mm.
    #[serde(rename = "D_c")]
    pub distance_mm: f64,
    /// Object length in pixels at calibration, `l_c`.
    #[serde(rename = "l_c")]
    pub pixel_length: f64,
    /// Real object length, mm.
    #[serde(rename = "L_real")]
    pub real_length_mm: f64,
    /// Total pixel length of the frame.
    pub f: f64,
    #[serde(default)]
    pub mount: Mount,
}

impl CalibrationRecord {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let fields = [self.distance_mm, self.pixel_length, self.real_length_mm, self.f];
        if !fields.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(EstimatorError::InvalidCalibration(format!(
                "{} calibration fields must be positive: {fields:?}",
                self.mode
            )));
        }
        if self.pixel_length > self.f {
            return Err(EstimatorError::InvalidCalibration(format!(
                "l_c {} exceeds frame length {}",
                self.pixel_length, self.f
            )));
        }
        Ok(())
    }
}

/// Calibration for each camera branch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationSet {
    pub mono: Option<CalibrationRecord>,
    pub thermal: Option<CalibrationRecord>,
}

impl CalibrationSet {
    pub fn get(&self, mode: SensorMode) -> Option<&CalibrationRecord> {
        match mode {
            SensorMode::Monocular => self.mono.as_ref(),
            SensorMode::Thermal => self.thermal.as_ref(),
        }
    }

    pub fn set(&mut self, record: CalibrationRecord) {
        match record.mode {
            SensorMode::Monocular => self.mono = Some(record),
            SensorMode::Thermal => self.thermal = Some(record),
        }
    }

    pub fn records(&self) -> Vec<CalibrationRecord> {
        self.mono.iter().chain(self.thermal.iter()).copied().collect()
    }

    pub fn from_records(records: &[CalibrationRecord]) -> Result<Self, EstimatorError> {
        let mut set = Self::default();
        for r in records {
            r.validate()?;
            set.set(*r);
        }
        Ok(set)
    }

    /// Reads a calibration file holding one record or an array of records.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let records: Vec<CalibrationRecord> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|r| vec![r])
        }
        .map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_records(&records).map_err(|e| e.to_string())
    }
}

/// Scales a pixel coordinate to millimeters in the image plane.
pub fn pixel_to_real(
    c_p: Vector2<f64>,
    pixel_length: f64,
    real_length_mm: f64,
) -> Result<Vector2<f64>, EstimatorError> {
    if !(pixel_length > 0.0) {
        return Err(EstimatorError::ZeroPixelLength(pixel_length));
    }
    Ok(c_p * (real_length_mm / pixel_length))
}

/// Current distance from the current pixel length.
pub fn estimate_depth(pixel_length: f64, calib: &CalibrationRecord) -> Result<f64, EstimatorError> {
    if !(pixel_length > 0.0) {
        return Err(EstimatorError::ZeroPixelLength(pixel_length));
    }
    Ok(calib.distance_mm * calib.pixel_length / pixel_length)
}

/// Places an image-plane point at depth `depth_mm` in the global frame.
///
/// Camera axes map to global as: image x to global X, optical axis to
/// global Y, image y to global Z. The mount then rotates about Z and
/// translates.
pub fn compose_world(c_r: Vector2<f64>, depth_mm: f64, mount: &Mount) -> Vector3<f64> {
    let (s, c) = mount.yaw_deg.to_radians().sin_cos();
    let (x, y) = (c_r.x, depth_mm);
    Vector3::new(c * x - s * y + mount.dx, s * x + c * y + mount.dy, c_r.y + mount.dz)
}

/// Difference-quotient velocity, mm/s.
pub fn velocity(p_t: Vector3<f64>, p_prev: Vector3<f64>, dt: f64) -> Result<Vector3<f64>, EstimatorError> {
    if !(dt > 0.0) {
        return Err(EstimatorError::NonPositiveDt(dt));
    }
    Ok((p_t - p_prev) / dt)
}

/// Estimated UAV state at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub mode: SensorMode,
}

/// Writes `timestamp,x,y,z,vx,vy,vz,mode` rows with a header line.
pub fn write_trajectory<W: std::io::Write>(out: &mut W, states: &[WorldState]) -> std::io::Result<()> {
    writeln!(out, "timestamp,x,y,z,vx,vy,vz,mode")?;
    for s in states {
        let (p, v) = (s.position, s.velocity);
        writeln!(out, "{},{},{},{},{},{},{},{}", s.timestamp, p.x, p.y, p.z, v.x, v.y, v.z, s.mode)?;
    }
    Ok(())
}

/// Reads a trajectory CSV written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Vec<WorldState>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("timestamp")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("{}:{}: expected 8 fields", path.display(), i + 1));
        }
        let num = |k: usize| -> Result<f64, String> {
            f[k].trim().parse::<f64>().map_err(|_| format!("{}:{}: bad number {:?}", path.display(), i + 1, f[k]))
        };
        out.push(WorldState {
            timestamp: num(0)?,
            position: Vector3::new(num(1)?, num(2)?, num(3)?),
            velocity: Vector3::new(num(4)?, num(5)?, num(6)?),
            mode: f[7].trim().parse().map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn calib(d: f64, l: f64) -> CalibrationRecord {
        CalibrationRecord {
            mode: SensorMode::Monocular,
            distance_mm: d,
            pixel_length: l,
            real_length_mm: 350.0,
            f: 1920.0,
            mount: Mount::default(),
        }
    }

    #[test]
    fn iso_gate() {
        assert_eq!(select_mode(3200, DEFAULT_ISO_THRESHOLD), SensorMode::Monocular);
        assert_eq!(select_mode(8000, DEFAULT_ISO_THRESHOLD), SensorMode::Thermal);
        assert_eq!(select_mode(6400, DEFAULT_ISO_THRESHOLD), SensorMode::Thermal);
    }

    #[test]
    fn pixel_scaling() {
        let o = pixel_to_real(Vector2::zeros(), 17.0, 350.0).unwrap();
        assert_eq!(o, Vector2::zeros());
        let p = pixel_to_real(Vector2::new(100.0, 50.0), 70.0, 350.0).unwrap();
        assert_relative_eq!(p, Vector2::new(500.0, 250.0), max_relative = 1e-12);
        let half = pixel_to_real(Vector2::new(100.0, 50.0), 140.0, 350.0).unwrap();
        assert_relative_eq!(half * 2.0, p, max_relative = 1e-12);
        assert!(pixel_to_real(Vector2::new(1.0, 1.0), 0.0, 350.0).is_err());
    }

    #[test]
    fn depth_from_pixel_length() {
        let c = calib(3000.0, 70.0);
        assert_eq!(estimate_depth(70.0, &c).unwrap(), 3000.0);
        assert_eq!(estimate_depth(140.0, &c).unwrap(), 1500.0);
        assert_eq!(estimate_depth(35.0, &c).unwrap(), 6000.0);
        assert_eq!(estimate_depth(0.0, &c), Err(EstimatorError::ZeroPixelLength(0.0)));
    }

    #[test]
    fn world_composition() {
        let m = Mount::default();
        assert_eq!(compose_world(Vector2::zeros(), 3000.0, &m), Vector3::new(0.0, 3000.0, 0.0));
        let raised = Mount { dz: 500.0, ..m };
        let a = compose_world(Vector2::new(120.0, -40.0), 2500.0, &m);
        let b = compose_world(Vector2::new(120.0, -40.0), 2500.0, &raised);
        assert_eq!(b - a, Vector3::new(0.0, 0.0, 500.0));
        let turned = Mount { yaw_deg: 90.0, ..m };
        let r = compose_world(Vector2::new(0.0, 0.0), 1000.0, &turned);
        assert_relative_eq!(r, Vector3::new(-1000.0, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn velocity_difference_quotient() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(velocity(p, p, 0.1).unwrap(), Vector3::zeros());
        let v = velocity(Vector3::new(300.0, 0.0, 0.0), Vector3::zeros(), 0.1).unwrap();
        assert_relative_eq!(v.x, 3000.0, max_relative = 1e-12);
        let back = velocity(Vector3::zeros(), Vector3::new(300.0, 0.0, 0.0), 0.1).unwrap();
        assert_eq!(back, -v);
        assert!(velocity(p, p, 0.0).is_err());
    }

    #[test]
    fn calibration_json_keys() {
        let json = r#"{"mode":"thermal","D_c":3000,"l_c":60,"L_real":350,"f":640,"mount":{"dx":0,"dy":0,"dz":1000,"yaw_deg":0}}"#;
        let r: CalibrationRecord = serde_json::from_str(json).unwrap();
        assert_eq!(r.mode, SensorMode::Thermal);
        assert_eq!(r.mount.dz, 1000.0);
        r.validate().unwrap();
        assert!(calib(3000.0, 2000.0).validate().is_err());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let states = vec![WorldState {
            timestamp: 1.0 / 3.0,
            position: Vector3::new(1.5, -2.25, 1e-7),
            velocity: Vector3::new(0.0, 3.0, -4.0),
            mode: SensorMode::Thermal,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &states).unwrap();
        std::fs::write(&p, buf).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), states);
    }

    proptest! {
        /// Pinhole rendering l = f k L / D, then one calibration at `d_cal`.
        #[test]
        fn depth_round_trip_through_pinhole(d in 500.0f64..20_000.0, d_cal in 500.0f64..20_000.0, k in 0.3f64..3.0) {
            let (f, l_real) = (1920.0, 350.0);
            let pixel_len = |dist: f64| f * l_real * k / dist;
            let c = CalibrationRecord { distance_mm: d_cal, pixel_length: pixel_len(d_cal), ..calib(1.0, 1.0) };
            let est = estimate_depth(pixel_len(d), &c).unwrap();
            prop_assert!(((est - d) / d).abs() <= 1e-9);
        }

        #[test]
        fn scale_covariance(cx in -900.0f64..900.0, cy in -500.0f64..500.0, l in 5.0f64..500.0, scale in 0.1f64..10.0) {
            let base = calib(3000.0, 70.0);
            let scaled = CalibrationRecord { distance_mm: 3000.0 * scale, real_length_mm: 350.0 * scale, ..base };
            let run = |c: &CalibrationRecord| {
                let cr = pixel_to_real(Vector2::new(cx, cy), l, c.real_length_mm).unwrap();
                compose_world(cr, estimate_depth(l, c).unwrap(), &c.mount)
            };
            let (a, b) = (run(&base), run(&scaled));
            prop_assert!((a * scale - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }
}
