//! Sensor record types, log formats and cross-rate stream alignment.
//!
//! All timestamps are session-relative seconds. Image coordinates use the
//! frame center as origin with x pointing right and y pointing up.

mod formats;
mod pgm;
mod session;

use std::path::PathBuf;

use thiserror::Error;

pub use formats::{
    read_detections, read_ground_truth, read_lidar_csv, read_presence, read_thermal_index, write_detections,
    write_ground_truth, write_lidar_csv, write_presence, write_thermal_index, ThermalIndexEntry,
};
pub use pgm::{read_pgm, write_pgm};
pub use session::{
    frame_file_name, load_session, LidarLayout, Session, SessionManifest, StreamOffsets, ThermalSequence, THERMAL_INDEX,
};

/// Maximum usable LIDAR range in millimeters (30 m sensor).
pub const MAX_RANGE_MM: i32 = 30_000;

/// Errors raised while reading or writing sensor logs.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: malformed record at {location}: {reason}")]
    MalformedRecord {
        path: PathBuf,
        /// 1-based line number, or frame index for thermal frames.
        location: usize,
        reason: String,
    },
    #[error("{path}: timestamps not increasing at record {index}")]
    NonMonotonicTimestamps { path: PathBuf, index: usize },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything carrying a session-clock timestamp.
pub trait Timestamped {
    fn timestamp(&self) -> f64;
}

/// Returns the record with the greatest timestamp `<= t`.
///
/// `stream` must be sorted by timestamp. When several records share the
/// winning timestamp the last of them is returned.
pub fn nearest_before<T: Timestamped>(stream: &[T], t: f64) -> Option<&T> {
    let idx = stream.partition_point(|r| r.timestamp() <= t);
    idx.checked_sub(1).map(|i| &stream[i])
}

/// Index of the record whose timestamp is closest to `t`, if any lies within `tolerance`.
pub fn nearest_within<T: Timestamped>(stream: &[T], t: f64, tolerance: f64) -> Option<usize> {
    let idx = stream.partition_point(|r| r.timestamp() < t);
    let mut best: Option<(usize, f64)> = None;
    for i in [idx.wrapping_sub(1), idx] {
        if let Some(r) = stream.get(i) {
            let d = (r.timestamp() - t).abs();
            if d <= tolerance && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Axis-aligned box in center-origin image coordinates (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }
}

/// Timestamped 8-bit grayscale frame from the thermal camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major intensities, `width * height` long.
    pub pixels: Vec<u8>,
}

impl ThermalFrame {
    pub fn new(timestamp: f64, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, String> {
        if width == 0 || height == 0 {
            return Err(format!("frame dimensions must be positive, got {width}x{height}"));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(format!(
                "pixel buffer has {} entries, expected {}",
                pixels.len(),
                width as usize * height as usize
            ));
        }
        Ok(Self { timestamp, width, height, pixels })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width as usize + col]
    }
}

impl Timestamped for ThermalFrame {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// One planar LIDAR sweep. Ranges are millimeters; values `<= 0` mean no return.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub timestamp: f64,
    pub angular_start: f64,
    pub points_per_degree: u32,
    pub fov_degrees: u32,
    pub ranges: Vec<i32>,
}

impl LidarScan {
    pub fn new(timestamp: f64, layout: LidarLayout, ranges: Vec<i32>) -> Result<Self, String> {
        if layout.points_per_degree == 0 {
            return Err("points_per_degree must be >= 1".into());
        }
        let beams = layout.beam_count();
        if ranges.len() != beams {
            return Err(format!("scan has {} ranges, expected {beams}", ranges.len()));
        }
        if let Some(r) = ranges.iter().find(|&&r| r > MAX_RANGE_MM) {
            return Err(format!("range {r} mm exceeds sensor maximum {MAX_RANGE_MM}"));
        }
        Ok(Self {
            timestamp,
            angular_start: layout.angular_start,
            points_per_degree: layout.points_per_degree,
            fov_degrees: layout.fov_degrees,
            ranges,
        })
    }

    pub fn layout(&self) -> LidarLayout {
        LidarLayout {
            angular_start: self.angular_start,
            points_per_degree: self.points_per_degree,
            fov_degrees: self.fov_degrees,
        }
    }

    /// Bearing in degrees of the center of beam `index` (may be fractional).
    pub fn bearing_deg(&self, index: f64) -> f64 {
        self.angular_start + (index + 0.5) / self.points_per_degree as f64
    }
}

impl Timestamped for LidarScan {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// Scored pixel-space box from an external detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub timestamp: f64,
    pub frame_id: u64,
    pub bbox: BBox,
    pub score: f64,
    pub iso: u32,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if !(self.bbox.w > 0.0 && self.bbox.h > 0.0) {
            return Err(format!("box size {}x{} must be positive", self.bbox.w, self.bbox.h));
        }
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err("frame dimensions must be positive".into());
        }
        let (hw, hh) = (self.frame_width as f64 / 2.0, self.frame_height as f64 / 2.0);
        if !(self.bbox.cx.abs() <= hw && self.bbox.cy.abs() <= hh) {
            return Err(format!(
                "box center ({}, {}) outside the {}x{} frame",
                self.bbox.cx, self.bbox.cy, self.frame_width, self.frame_height
            ));
        }
        if !self.timestamp.is_finite() {
            return Err("timestamp is not finite".into());
        }
        Ok(())
    }
}

impl Timestamped for DetectionRecord {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// Motion-capture position sample (millimeters, global frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: f64,
    pub position: [f64; 3],
}

impl Timestamped for GroundTruthSample {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}

/// Whether the target was truly in view at a camera frame time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresenceFlag {
    pub timestamp: f64,
    pub visible: bool,
}

impl Timestamped for PresenceFlag {
    fn timestamp(&self) -> f64 {
        self.timestamp
    }
}
