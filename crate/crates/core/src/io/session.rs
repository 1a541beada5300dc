//! Session manifests: one JSON file tying the sensor logs together on a shared clock.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::{
    read_detections, read_ground_truth, read_lidar_csv, read_presence, read_thermal_index, ThermalIndexEntry,
};
use super::{read_pgm, DetectionRecord, GroundTruthSample, IoError, LidarScan, PresenceFlag, ThermalFrame};

/// Name of the frame index inside a thermal directory.
pub const THERMAL_INDEX: &str = "index.jsonl";

/// Angular layout of a planar scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarLayout {
    /// Bearing of the first beam edge, degrees.
    pub angular_start: f64,
    pub points_per_degree: u32,
    pub fov_degrees: u32,
}

impl Default for LidarLayout {
    fn default() -> Self {
        Self { angular_start: 0.0, points_per_degree: 4, fov_degrees: 180 }
    }
}

impl LidarLayout {
    pub fn beam_count(&self) -> usize {
        self.fov_degrees as usize * self.points_per_degree as usize
    }
}

/// Per-stream clock offsets in seconds, added to every raw timestamp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamOffsets {
    pub thermal: f64,
    pub lidar: f64,
    pub detections: f64,
    pub groundtruth: f64,
}

/// On-disk session description. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub thermal_dir: Option<PathBuf>,
    pub lidar_csv: Option<PathBuf>,
    pub detections_jsonl: Option<PathBuf>,
    pub groundtruth_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence_csv: Option<PathBuf>,
    #[serde(default)]
    pub offsets: StreamOffsets,
    /// Session length in seconds; records outside `[0, duration]` are dropped.
    pub duration: Option<f64>,
    #[serde(default)]
    pub lidar_layout: LidarLayout,
}

impl SessionManifest {
    pub fn validate(&self) -> Result<(), IoError> {
        let o = &self.offsets;
        if ![o.thermal, o.lidar, o.detections, o.groundtruth].iter().all(|v| v.is_finite()) {
            return Err(IoError::InvalidManifest("offsets must be finite".into()));
        }
        if self.thermal_dir.is_none() && self.lidar_csv.is_none() && self.detections_jsonl.is_none() {
            return Err(IoError::InvalidManifest("no sensor stream referenced".into()));
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d > 0.0) {
                return Err(IoError::InvalidManifest(format!("duration {d} must be positive")));
            }
        }
        if self.lidar_layout.points_per_degree == 0 {
            return Err(IoError::InvalidManifest("lidar_layout.points_per_degree must be >= 1".into()));
        }
        Ok(())
    }
}

/// Thermal frames are indexed at load time and decoded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSequence {
    dir: PathBuf,
    /// Index entries with the session offset already applied.
    entries: Vec<ThermalIndexEntry>,
    raw_offset: f64,
}

impl ThermalSequence {
    pub fn open(dir: &Path, offset: f64) -> Result<Self, IoError> {
        let index = read_thermal_index(&dir.join(THERMAL_INDEX))?;
        for e in &index {
            let p = frame_path(dir, e.frame_id);
            if !p.is_file() {
                return Err(IoError::MissingFile(p));
            }
        }
        let entries = index
            .into_iter()
            .map(|e| ThermalIndexEntry { frame_id: e.frame_id, timestamp: e.timestamp + offset })
            .collect();
        Ok(Self { dir: dir.to_path_buf(), entries, raw_offset: offset })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ThermalIndexEntry] {
        &self.entries
    }

    pub fn offset(&self) -> f64 {
        self.raw_offset
    }

    /// Decodes frame `i` of the sequence.
    pub fn load_frame(&self, i: usize) -> Result<ThermalFrame, IoError> {
        let e = self.entries[i];
        read_pgm(&frame_path(&self.dir, e.frame_id), e.timestamp, i)
    }

    fn retain_window(&mut self, lo: f64, hi: f64) {
        self.entries.retain(|e| e.timestamp >= lo && e.timestamp <= hi);
    }
}

/// File name of a thermal frame.
pub fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:06}.pgm")
}

fn frame_path(dir: &Path, frame_id: u64) -> PathBuf {
    dir.join(frame_file_name(frame_id))
}

/// All streams of one recording, on the shared session clock.
#[derive(Debug, Clone, Default)]
pub struct Session {
    pub thermal: Option<ThermalSequence>,
    pub lidar: Option<Vec<LidarScan>>,
    pub detections: Option<Vec<DetectionRecord>>,
    pub ground_truth: Option<Vec<GroundTruthSample>>,
    pub presence: Option<Vec<PresenceFlag>>,
    pub duration: Option<f64>,
}

impl Session {
    pub fn lidar(&self) -> &[LidarScan] {
        self.lidar.as_deref().unwrap_or(&[])
    }

    pub fn detections(&self) -> &[DetectionRecord] {
        self.detections.as_deref().unwrap_or(&[])
    }

    pub fn ground_truth(&self) -> &[GroundTruthSample] {
        self.ground_truth.as_deref().unwrap_or(&[])
    }

    /// Number of streams present.
    pub fn stream_count(&self) -> usize {
        [self.thermal.is_some(), self.lidar.is_some(), self.detections.is_some(), self.ground_truth.is_some()]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn window(duration: Option<f64>) -> (f64, f64) {
    match duration {
        Some(d) => (0.0, d),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Loads every stream referenced by the manifest and applies its clock offset.
pub fn load_session(manifest_path: &Path) -> Result<Session, IoError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::MissingFile(manifest_path.to_path_buf()),
        _ => IoError::Io(e),
    })?;
    let manifest: SessionManifest = serde_json::from_str(&text).map_err(|e| IoError::InvalidManifest(e.to_string()))?;
    manifest.validate()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (lo, hi) = window(manifest.duration);
    let keep = |t: f64| t >= lo && t <= hi;
    let o = manifest.offsets;

    let thermal = match &manifest.thermal_dir {
        Some(dir) => {
            let mut seq = ThermalSequence::open(&resolve(base, dir), o.thermal)?;
            seq.retain_window(lo, hi);
            Some(seq)
        }
        None => None,
    };
    let lidar = match &manifest.lidar_csv {
        Some(p) => {
            let mut scans = read_lidar_csv(&resolve(base, p), manifest.lidar_layout)?;
            scans.iter_mut().for_each(|s| s.timestamp += o.lidar);
            scans.retain(|s| keep(s.timestamp));
            Some(scans)
        }
        None => None,
    };
    let detections = match &manifest.detections_jsonl {
        Some(p) => {
            let mut dets = read_detections(&resolve(base, p))?;
            dets.iter_mut().for_each(|d| d.timestamp += o.detections);
            dets.retain(|d| keep(d.timestamp));
            Some(dets)
        }
        None => None,
    };
    let ground_truth = match &manifest.groundtruth_csv {
        Some(p) => {
            let mut gt = read_ground_truth(&resolve(base, p))?;
            gt.iter_mut().for_each(|s| s.timestamp += o.groundtruth);
            Some(gt)
        }
        None => None,
    };
    let presence = match &manifest.presence_csv {
        Some(p) => Some(read_presence(&resolve(base, p))?),
        None => None,
    };
    Ok(Session { thermal, lidar, detections, ground_truth, presence, duration: manifest.duration })
}
