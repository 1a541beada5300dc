//! Planar LIDAR scan segmentation.
//!
//! A scan is cut into runs of adjacent beams whose ranges differ by at most a
//! gap threshold. Each surviving run yields a mean distance `D` and a cut
//! length `L = 2 D tan(theta)` where `theta` is the angle the run subtends,
//! `n_points / points_per_degree` degrees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{LidarScan, MAX_RANGE_MM};

#[derive(Debug, Error, PartialEq)]
pub enum LidarError {
    #[error("degenerate segment: {0}")]
    DegenerateSegment(String),
    #[error("invalid exclusion zone {label:?}: {reason}")]
    InvalidZone { label: String, reason: String },
}

/// How the subtended angle enters the cut-length formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleConvention {
    /// `L = 2 D tan(theta)` with the full subtended angle.
    #[default]
    AsPrinted,
    /// `L = 2 D tan(theta / 2)`, the chord of the subtended arc.
    HalfAngle,
}

impl AngleConvention {
    /// Angle (degrees) that goes inside `tan` for a run subtending `theta_deg`.
    pub fn tan_argument_deg(self, theta_deg: f64) -> f64 {
        match self {
            AngleConvention::AsPrinted => theta_deg,
            AngleConvention::HalfAngle => theta_deg / 2.0,
        }
    }

    /// Subtended angle (degrees) of an object of length `length` at distance `distance`.
    /// Inverse of [`segment_metrics`] before beam quantization.
    pub fn subtended_deg(self, length: f64, distance: f64) -> f64 {
        let half = (length / (2.0 * distance)).atan().to_degrees();
        match self {
            AngleConvention::AsPrinted => half,
            AngleConvention::HalfAngle => 2.0 * half,
        }
    }
}

impl std::str::FromStr for AngleConvention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as-printed" => Ok(Self::AsPrinted),
            "half-angle" => Ok(Self::HalfAngle),
            other => Err(format!("unknown angle convention {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZoneKind {
    /// Inclusive beam-index interval.
    Beams { start: usize, end: usize },
    /// Inclusive range band in millimeters.
    RangeBand { min_mm: f64, max_mm: f64 },
}

/// Region of a scan ignored before segmentation (walls, fixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionZone {
    #[serde(flatten)]
    pub kind: ZoneKind,
    #[serde(default)]
    pub label: String,
}

impl ExclusionZone {
    pub fn beams(start: usize, end: usize, label: &str) -> Self {
        Self { kind: ZoneKind::Beams { start, end }, label: label.into() }
    }

    pub fn range_band(min_mm: f64, max_mm: f64, label: &str) -> Self {
        Self { kind: ZoneKind::RangeBand { min_mm, max_mm }, label: label.into() }
    }

    pub fn validate(&self, beam_count: usize) -> Result<(), LidarError> {
        let bad = |reason: String| LidarError::InvalidZone { label: self.label.clone(), reason };
        match self.kind {
            ZoneKind::Beams { start, end } => {
                if start > end {
                    return Err(bad(format!("empty interval {start}..={end}")));
                }
                if end >= beam_count {
                    return Err(bad(format!("beam {end} beyond scan of {beam_count} beams")));
                }
            }
            ZoneKind::RangeBand { min_mm, max_mm } => {
                if !(min_mm <= max_mm) || min_mm < 0.0 || max_mm > MAX_RANGE_MM as f64 {
                    return Err(bad(format!("band [{min_mm}, {max_mm}] empty or outside sensor range")));
                }
            }
        }
        Ok(())
    }

    fn excludes(&self, beam: usize, range_mm: i32) -> bool {
        match self.kind {
            ZoneKind::Beams { start, end } => (start..=end).contains(&beam),
            ZoneKind::RangeBand { min_mm, max_mm } => {
                let r = range_mm as f64;
                r >= min_mm && r <= max_mm
            }
        }
    }
}

/// A run of adjacent beams hitting one object.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarSegment {
    pub start_beam: usize,
    pub n_points: usize,
    /// Range of each member beam, millimeters.
    pub distances: Vec<f64>,
    /// Mean distance `D`, millimeters.
    pub mean_distance: f64,
    /// Cut length `L`, millimeters.
    pub length: f64,
    /// Bearing of the run's center, degrees.
    pub bearing_deg: f64,
}

impl LidarSegment {
    pub fn beams(&self) -> std::ops::Range<usize> {
        self.start_beam..self.start_beam + self.n_points
    }
}

/// Mean distance and cut length of a run of `n_points` beams.
pub fn segment_metrics(
    distances: &[f64],
    n_points: usize,
    points_per_degree: u32,
    convention: AngleConvention,
) -> Result<(f64, f64), LidarError> {
    if n_points == 0 || distances.len() != n_points {
        return Err(LidarError::DegenerateSegment(format!(
            "{n_points} active points for {} distances",
            distances.len()
        )));
    }
    if points_per_degree == 0 {
        return Err(LidarError::DegenerateSegment("zero points per degree".into()));
    }
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &d in distances {
        sum += d;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    // Rounding can push the mean one ulp outside the member range.
    let mean = (sum / n_points as f64).clamp(lo, hi);
    if !(mean > 0.0) {
        return Err(LidarError::DegenerateSegment(format!("mean distance {mean} not positive")));
    }
    let theta = n_points as f64 / points_per_degree as f64;
    let arg = convention.tan_argument_deg(theta);
    if arg >= 90.0 {
        return Err(LidarError::DegenerateSegment(format!(
            "{n_points} points subtend {theta} degrees, tangent undefined"
        )));
    }
    Ok((mean, 2.0 * mean * arg.to_radians().tan()))
}

/// Segmentation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParams<'a> {
    pub zones: &'a [ExclusionZone],
    pub gap_mm: f64,
    pub min_points: usize,
    pub convention: AngleConvention,
}

/// Groups the valid beams of `scan` into segments, ordered by start beam.
///
/// Beams with no return or inside a zone break runs. Runs shorter than
/// `min_points`, and runs too wide for the tangent to be defined, are dropped.
pub fn segment_scan(scan: &LidarScan, params: &SegmentParams<'_>) -> Vec<LidarSegment> {
    let valid = |i: usize, r: i32| r > 0 && !params.zones.iter().any(|z| z.excludes(i, r));
    let ppd = scan.points_per_degree;
    let mut out = Vec::new();
    let mut run: Vec<f64> = Vec::new();
    let mut start = 0usize;

    let mut flush = |start: usize, run: &mut Vec<f64>| {
        if run.len() >= params.min_points.max(1) {
            if let Ok((d, l)) = segment_metrics(run, run.len(), ppd, params.convention) {
                out.push(LidarSegment {
                    start_beam: start,
                    n_points: run.len(),
                    mean_distance: d,
                    length: l,
                    bearing_deg: scan.bearing_deg(start as f64 + (run.len() as f64 - 1.0) / 2.0),
                    distances: std::mem::take(run),
                });
            }
        }
        run.clear();
    };

    for (i, &r) in scan.ranges.iter().enumerate() {
        if !valid(i, r) {
            flush(start, &mut run);
            continue;
        }
        let r = r as f64;
        if let Some(&prev) = run.last() {
            if (r - prev).abs() > params.gap_mm {
                flush(start, &mut run);
            }
        }
        if run.is_empty() {
            start = i;
        }
        run.push(r);
    }
    flush(start, &mut run);
    out
}

/// Rule for picking the UAV among several segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetPolicy {
    /// Smallest mean distance.
    #[default]
    Nearest,
    /// Cut length closest to the expected UAV length (mm).
    ExpectedLength { length_mm: f64 },
    /// Center beam closest to a hinted beam index.
    BeamHint { beam: usize },
}

/// Picks one segment according to `policy`; ties go to the lower start beam.
pub fn select_target(segments: &[LidarSegment], policy: TargetPolicy) -> Option<&LidarSegment> {
    let key = |s: &LidarSegment| match policy {
        TargetPolicy::Nearest => s.mean_distance,
        TargetPolicy::ExpectedLength { length_mm } => (s.length - length_mm).abs(),
        TargetPolicy::BeamHint { beam } => (s.start_beam as f64 + (s.n_points as f64 - 1.0) / 2.0 - beam as f64).abs(),
    };
    segments.iter().fold(None, |best: Option<&LidarSegment>, s| match best {
        Some(b) if key(b) < key(s) || (key(b) == key(s) && b.start_beam <= s.start_beam) => Some(b),
        _ => Some(s),
    })
}
