//! Synthetic sessions rendered from an analytic trajectory.
//!
//! Cameras sit at the origin looking along +Y with image x along +X and
//! image y along +Z, raised by `camera_height`. The LIDAR scans the
//! horizontal plane `z = lidar.height` with bearing 0 along +X and 90 along +Y.
//! Projection is pinhole with `f_px = width / (2 tan(hfov / 2))`.

mod histograms;
mod rng;

use std::f64::consts::TAU;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use histograms::{gen_histogram_cases, HistogramCase, HistogramKind};
pub use rng::SplitMix64;

use crate::estimator::{CalibrationRecord, Mount, SensorMode, DEFAULT_ISO_THRESHOLD};
use crate::io::{
    frame_file_name, write_detections, write_ground_truth, write_lidar_csv, write_pgm, write_presence,
    write_thermal_index, BBox, DetectionRecord, GroundTruthSample, LidarLayout, LidarScan, PresenceFlag,
    SessionManifest, StreamOffsets, ThermalFrame, ThermalIndexEntry, MAX_RANGE_MM,
};
use crate::lidar::AngleConvention;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    Hover {
        position: [f64; 3],
    },
    /// Back and forth between two points at constant speed.
    Line {
        start: [f64; 3],
        end: [f64; 3],
        speed: f64,
    },
    /// Circle in a plane tilted about the X axis by `tilt_deg` from horizontal.
    Circle {
        center: [f64; 3],
        radius: f64,
        speed: f64,
        #[serde(default)]
        tilt_deg: f64,
    },
    /// `center + amplitude * sin(2 pi freq t + phase)` per axis.
    Lissajous {
        center: [f64; 3],
        amplitude: [f64; 3],
        freq_hz: [f64; 3],
        #[serde(default)]
        phase: [f64; 3],
    },
}

impl Trajectory {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        match *self {
            Trajectory::Hover { position } => position.into(),
            Trajectory::Line { start, end, speed } => {
                let (a, b) = (Vector3::from(start), Vector3::from(end));
                let len = (b - a).norm();
                if len == 0.0 {
                    return a;
                }
                let s = (speed * t).rem_euclid(2.0 * len);
                let s = if s > len { 2.0 * len - s } else { s };
                a + (b - a) * (s / len)
            }
            Trajectory::Circle { center, radius, speed, tilt_deg } => {
                let th = speed / radius * t;
                let (st, ct) = tilt_deg.to_radians().sin_cos();
                Vector3::from(center) + radius * Vector3::new(th.cos(), th.sin() * ct, th.sin() * st)
            }
            Trajectory::Lissajous { center, amplitude, freq_hz, phase } => {
                Vector3::from_fn(|i, _| center[i] + amplitude[i] * (TAU * freq_hz[i] * t + phase[i]).sin())
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Trajectory::Hover { position } => finite(position),
            Trajectory::Line { start, end, speed } => finite(start) && finite(end) && *speed >= 0.0,
            Trajectory::Circle { center, radius, speed, tilt_deg } => {
                finite(center) && *radius > 0.0 && *speed >= 0.0 && tilt_deg.is_finite()
            }
            Trajectory::Lissajous { center, amplitude, freq_hz, phase } => {
                finite(center) && finite(amplitude) && finite(freq_hz) && finite(phase)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("trajectory parameters out of range: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub mono: f64,
    pub thermal: f64,
    pub lidar: f64,
    pub groundtruth: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { mono: 60.0, thermal: 30.0, lidar: 40.0, groundtruth: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Std of detection box center, width and height, px.
    pub jitter_px: f64,
    pub miss_prob: f64,
    pub thermal_background: f64,
    pub thermal_noise: f64,
    pub thermal_hot: f64,
    pub lidar_range_std: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            jitter_px: 0.0,
            miss_prob: 0.0,
            thermal_background: 40.0,
            thermal_noise: 3.0,
            thermal_hot: 215.0,
            lidar_range_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl CameraSpec {
    pub fn focal_px(&self) -> f64 {
        self.width as f64 / (2.0 * (self.hfov_deg.to_radians() / 2.0).tan())
    }

    /// Center-origin pixel box of the UAV, or `None` when it is behind the
    /// camera or its center falls outside the frame.
    fn project(&self, cam: Vector3<f64>, length: f64, height: f64) -> Option<BBox> {
        if cam.y <= 0.0 {
            return None;
        }
        let f = self.focal_px();
        let b = BBox::new(f * cam.x / cam.y, f * cam.z / cam.y, f * length / cam.y, f * height / cam.y);
        let inside = b.cx.abs() < self.width as f64 / 2.0 && b.cy.abs() < self.height as f64 / 2.0;
        inside.then_some(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub enabled: bool,
    pub height: f64,
    pub points_per_degree: u32,
    pub angle_convention: AngleConvention,
    /// Background wall range returned by every beam, mm.
    pub wall_range: Option<f64>,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            height: 1000.0,
            points_per_degree: 4,
            angle_convention: AngleConvention::AsPrinted,
            wall_range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsoStep {
    pub start: f64,
    pub iso: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration: f64,
    pub trajectory: Trajectory,
    #[serde(default = "default_uav_length")]
    pub uav_length: f64,
    #[serde(default = "default_uav_height")]
    pub uav_height: f64,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default = "default_mono")]
    pub mono_camera: CameraSpec,
    #[serde(default = "default_thermal")]
    pub thermal_camera: CameraSpec,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
    #[serde(default)]
    pub lidar: LidarSpec,
    /// Piecewise-constant ISO of the monocular camera; empty means ISO 400 throughout.
    #[serde(default)]
    pub iso_schedule: Vec<IsoStep>,
    /// Distance at which the reference calibration is taken, mm.
    #[serde(default = "default_calibration_distance")]
    pub calibration_distance: f64,
}

fn default_uav_length() -> f64 {
    350.0
}
fn default_uav_height() -> f64 {
    200.0
}
fn default_camera_height() -> f64 {
    1000.0
}
fn default_calibration_distance() -> f64 {
    3000.0
}
fn default_mono() -> CameraSpec {
    CameraSpec { width: 1920, height: 1080, hfov_deg: 60.0, enabled: true }
}
fn default_thermal() -> CameraSpec {
    CameraSpec { width: 640, height: 512, hfov_deg: 50.0, enabled: true }
}

impl ScenarioSpec {
    /// A spec with every optional field at its default.
    pub fn new(seed: u64, duration: f64, trajectory: Trajectory) -> Self {
        Self {
            seed,
            duration,
            trajectory,
            uav_length: default_uav_length(),
            uav_height: default_uav_height(),
            rates: Rates::default(),
            noise: Noise::default(),
            mono_camera: default_mono(),
            thermal_camera: default_thermal(),
            camera_height: default_camera_height(),
            lidar: LidarSpec::default(),
            iso_schedule: Vec::new(),
            calibration_distance: default_calibration_distance(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        let r = &self.rates;
        for (name, v) in [("mono", r.mono), ("thermal", r.thermal), ("lidar", r.lidar), ("groundtruth", r.groundtruth)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("rates.{name} must be > 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise.miss_prob) {
            return bad(format!("noise.miss_prob {} outside [0, 1]", self.noise.miss_prob));
        }
        let n = &self.noise;
        if !(n.jitter_px >= 0.0 && n.thermal_noise >= 0.0 && n.lidar_range_std >= 0.0) {
            return bad("noise standard deviations must be >= 0".into());
        }
        if !(0.0..=255.0).contains(&n.thermal_background) || !(0.0..=255.0).contains(&n.thermal_hot) {
            return bad("thermal levels must lie in [0, 255]".into());
        }
        if !(self.uav_length > 0.0 && self.uav_height > 0.0 && self.calibration_distance > 0.0) {
            return bad("uav_length, uav_height and calibration_distance must be > 0".into());
        }
        for (name, cam) in [("mono_camera", &self.mono_camera), ("thermal_camera", &self.thermal_camera)] {
            if cam.width == 0 || cam.height == 0 || !(cam.hfov_deg > 0.0 && cam.hfov_deg < 180.0) {
                return bad(format!("{name} needs positive size and 0 < hfov_deg < 180"));
            }
        }
        if !self.mono_camera.enabled && !self.thermal_camera.enabled {
            return bad("at least one camera must be enabled".into());
        }
        if self.lidar.points_per_degree == 0 {
            return bad("lidar.points_per_degree must be > 0".into());
        }
        if self.iso_schedule.windows(2).any(|w| !(w[1].start > w[0].start)) {
            return bad("iso_schedule starts must increase".into());
        }
        self.trajectory.validate().map_err(SynthError::InvalidSpec)
    }

    pub fn iso_at(&self, t: f64) -> u32 {
        self.iso_schedule.iter().take_while(|s| s.start <= t).last().map_or(400, |s| s.iso)
    }

    fn camera_point(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(p.x, p.y, p.z - self.camera_height)
    }

    /// Exact calibration of each enabled camera at `calibration_distance`.
    pub fn reference_calibration(&self) -> Vec<CalibrationRecord> {
        let mount = Mount { dz: self.camera_height, ..Mount::default() };
        [(SensorMode::Monocular, &self.mono_camera), (SensorMode::Thermal, &self.thermal_camera)]
            .into_iter()
            .filter(|(_, c)| c.enabled)
            .map(|(mode, c)| CalibrationRecord {
                mode,
                distance_mm: self.calibration_distance,
                pixel_length: c.focal_px() * self.uav_length / self.calibration_distance,
                real_length_mm: self.uav_length,
                f: c.width as f64,
                mount,
            })
            .collect()
    }
}

fn frame_times(rate: f64, duration: f64) -> impl Iterator<Item = (u64, f64)> {
    let n = (duration * rate).floor() as u64;
    (0..=n).map(move |i| (i, i as f64 / rate)).filter(move |&(_, t)| t <= duration)
}

/// Renders one LIDAR sweep.
pub fn render_scan(spec: &ScenarioSpec, p: Vector3<f64>, rng: &mut SplitMix64) -> Vec<i32> {
    let l = &spec.lidar;
    let layout = LidarLayout { points_per_degree: l.points_per_degree, ..LidarLayout::default() };
    let beams = layout.beam_count();
    let noisy = |rng: &mut SplitMix64, r: f64| {
        let v = if spec.noise.lidar_range_std > 0.0 { rng.normal(r, spec.noise.lidar_range_std) } else { r };
        (v.round() as i32).clamp(1, MAX_RANGE_MM)
    };
    let mut ranges = vec![0i32; beams];
    if let Some(wall) = l.wall_range {
        for r in ranges.iter_mut() {
            *r = noisy(rng, wall);
        }
    }
    if (p.z - l.height).abs() <= spec.uav_height / 2.0 {
        let range = p.x.hypot(p.y);
        let bearing = p.y.atan2(p.x).to_degrees();
        let ppd = l.points_per_degree as f64;
        let n = (l.angle_convention.subtended_deg(spec.uav_length, range) * ppd).round().max(1.0) as i64;
        let center = (bearing - layout.angular_start) * ppd - 0.5;
        let first = (center - (n - 1) as f64 / 2.0).round() as i64;
        for b in first.max(0)..(first + n).min(beams as i64) {
            ranges[b as usize] = noisy(rng, range);
        }
    }
    ranges
}

/// Renders one thermal frame with the UAV as a flat hot rectangle.
pub fn render_thermal(spec: &ScenarioSpec, bbox: Option<BBox>, t: f64, rng: &mut SplitMix64) -> ThermalFrame {
    let cam = &spec.thermal_camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let n = &spec.noise;
    let mut px = Vec::with_capacity(w * h);
    for row in 0..h {
        let y = h as f64 / 2.0 - (row as f64 + 0.5);
        for col in 0..w {
            let x = col as f64 + 0.5 - w as f64 / 2.0;
            let hot = bbox.is_some_and(|b| (x - b.cx).abs() <= b.w / 2.0 && (y - b.cy).abs() <= b.h / 2.0);
            let level = if hot { n.thermal_hot } else { n.thermal_background };
            let v = if n.thermal_noise > 0.0 { rng.normal(level, n.thermal_noise) } else { level };
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    ThermalFrame { timestamp: t, width: cam.width, height: cam.height, pixels: px }
}

/// Paths of a generated session.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub manifest: PathBuf,
    pub calibration: PathBuf,
    pub scenario: PathBuf,
}

pub const MANIFEST: &str = "manifest.json";
pub const CALIBRATION: &str = "calibration.json";
pub const SCENARIO: &str = "scenario.json";

fn create(path: &Path) -> std::io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes a complete session for `spec` into `out_dir`.
///
/// Each stream draws from its own generator seeded from `spec.seed`, so
/// toggling one stream leaves the others unchanged.
pub fn gen_session(spec: &ScenarioSpec, out_dir: &Path) -> Result<GeneratedSession, SynthError> {
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    let traj = &spec.trajectory;
    let mut stream_rng = SplitMix64::new(spec.seed);
    let mut det_rng = SplitMix64::new(stream_rng.next_u64());
    let mut thermal_rng = SplitMix64::new(stream_rng.next_u64());
    let mut lidar_rng = SplitMix64::new(stream_rng.next_u64());
    let mut presence = Vec::new();

    let gt: Vec<GroundTruthSample> = frame_times(spec.rates.groundtruth, spec.duration)
        .map(|(_, t)| GroundTruthSample { timestamp: t, position: traj.position(t).into() })
        .collect();
    write_ground_truth(&mut create(&out_dir.join("groundtruth.csv"))?, &gt)?;

    let mut manifest = SessionManifest {
        thermal_dir: None,
        lidar_csv: None,
        detections_jsonl: None,
        groundtruth_csv: Some("groundtruth.csv".into()),
        presence_csv: Some("presence.csv".into()),
        offsets: StreamOffsets::default(),
        duration: Some(spec.duration),
        lidar_layout: LidarLayout { points_per_degree: spec.lidar.points_per_degree, ..LidarLayout::default() },
    };

    if spec.mono_camera.enabled {
        let cam = &spec.mono_camera;
        let j = spec.noise.jitter_px;
        let mut dets = Vec::new();
        for (i, t) in frame_times(spec.rates.mono, spec.duration) {
            let iso = spec.iso_at(t);
            let truth = cam.project(spec.camera_point(traj.position(t)), spec.uav_length, spec.uav_height);
            if iso < DEFAULT_ISO_THRESHOLD {
                presence.push(PresenceFlag { timestamp: t, visible: truth.is_some() });
            }
            // Draws happen for every frame so the noise stream does not depend on visibility.
            let missed = det_rng.bernoulli(spec.noise.miss_prob);
            let noise: [f64; 4] = std::array::from_fn(|_| if j > 0.0 { det_rng.normal(0.0, j) } else { 0.0 });
            let score = det_rng.range(0.85, 1.0);
            let Some(b) = truth else { continue };
            if missed {
                continue;
            }
            let bbox =
                BBox::new(b.cx + noise[0], b.cy + noise[1], (b.w + noise[2]).max(1.0), (b.h + noise[3]).max(1.0));
            let rec = DetectionRecord {
                timestamp: t,
                frame_id: i,
                bbox,
                score,
                iso,
                frame_width: cam.width,
                frame_height: cam.height,
            };
            if rec.validate().is_ok() {
                dets.push(rec);
            }
        }
        write_detections(&mut create(&out_dir.join("detections.jsonl"))?, &dets)?;
        manifest.detections_jsonl = Some("detections.jsonl".into());
    }

    if spec.thermal_camera.enabled {
        let dir = out_dir.join("thermal");
        fs::create_dir_all(&dir)?;
        let mut index = Vec::new();
        for (i, t) in frame_times(spec.rates.thermal, spec.duration) {
            let bbox =
                spec.thermal_camera.project(spec.camera_point(traj.position(t)), spec.uav_length, spec.uav_height);
            if spec.iso_at(t) >= DEFAULT_ISO_THRESHOLD || !spec.mono_camera.enabled {
                presence.push(PresenceFlag { timestamp: t, visible: bbox.is_some() });
            }
            let frame = render_thermal(spec, bbox, t, &mut thermal_rng);
            write_pgm(&dir.join(frame_file_name(i)), &frame)
                .map_err(|e| SynthError::Io(std::io::Error::other(e.to_string())))?;
            index.push(ThermalIndexEntry { frame_id: i, timestamp: t });
        }
        write_thermal_index(&mut create(&dir.join(crate::io::THERMAL_INDEX))?, &index)?;
        manifest.thermal_dir = Some("thermal".into());
    }

    if spec.lidar.enabled {
        let layout = manifest.lidar_layout;
        let scans: Vec<LidarScan> = frame_times(spec.rates.lidar, spec.duration)
            .map(|(_, t)| {
                let ranges = render_scan(spec, traj.position(t), &mut lidar_rng);
                LidarScan::new(t, layout, ranges).expect("rendered scan matches layout")
            })
            .collect();
        write_lidar_csv(&mut create(&out_dir.join("lidar.csv"))?, &scans)?;
        manifest.lidar_csv = Some("lidar.csv".into());
    }

    presence.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    write_presence(&mut create(&out_dir.join("presence.csv"))?, &presence)?;

    let paths = GeneratedSession {
        manifest: out_dir.join(MANIFEST),
        calibration: out_dir.join(CALIBRATION),
        scenario: out_dir.join(SCENARIO),
    };
    fs::write(&paths.manifest, pretty(&manifest))?;
    fs::write(&paths.calibration, pretty(&spec.reference_calibration()))?;
    fs::write(&paths.scenario, pretty(spec))?;
    Ok(paths)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
