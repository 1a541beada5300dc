//! Stream fold from a loaded session to world-frame states.
//!
//! The session clock is sampled at every detection and thermal timestamp.
//! Each tick picks a branch from the ISO of the most recent detection record;
//! the branch runs only if its own camera has a frame at that tick.

use std::collections::HashMap;

use nalgebra::Vector2;
use serde::Serialize;
use thiserror::Error;

use super::{
    compose_world, estimate_depth, pixel_to_real, select_mode, velocity, CalibrationRecord, CalibrationSet, SensorMode,
    WorldState,
};
use crate::config::{LengthUpdate, PipelineConfig};
use crate::io::{nearest_before, nearest_within, LidarScan, Session};
use crate::lidar::{segment_scan, select_target, LidarSegment, SegmentParams};
use crate::thermal::detect_thermal;
use crate::tracker::{Measurement, Tracker};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("no calibration for the {0} branch")]
    MissingCalibration(SensorMode),
    #[error("thermal branch activates but the session has no thermal frames")]
    MissingThermalInput,
    #[error("session has neither detections nor thermal frames")]
    NoInput,
    #[error("invalid configuration for this session: {0}")]
    Config(String),
    #[error("t={t}s, {stage}: {message}")]
    Stage { t: f64, stage: &'static str, message: String },
}

fn stage_err(t: f64, stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { t, stage, message }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Feed raw box centers to the estimator instead of filtered tracks.
    pub bypass_kf: bool,
}

/// Per-branch tick counters; `mono + thermal + idle == ticks`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BranchStats {
    pub ticks: usize,
    pub mono: usize,
    pub thermal: usize,
    /// Ticks where the selected camera had no frame.
    pub idle: usize,
    pub recalibrations: usize,
}

impl BranchStats {
    /// Frames routed to a branch.
    pub fn frames(&self) -> usize {
        self.mono + self.thermal
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub states: Vec<WorldState>,
    pub stats: BranchStats,
    /// Calibration in force at the end of the run.
    pub calibration: CalibrationSet,
}

struct Tick {
    t: f64,
    detections: std::ops::Range<usize>,
    thermal: Option<usize>,
}

/// Merges detection groups and thermal frames into one strictly increasing timeline.
fn timeline(session: &Session) -> Vec<Tick> {
    let dets = session.detections();
    let thermal = session.thermal.as_ref().map(|s| s.entries()).unwrap_or(&[]);
    let mut ticks = Vec::with_capacity(dets.len() + thermal.len());
    let (mut i, mut j) = (0, 0);
    while i < dets.len() || j < thermal.len() {
        let td = dets.get(i).map_or(f64::INFINITY, |d| d.timestamp);
        let tt = thermal.get(j).map_or(f64::INFINITY, |e| e.timestamp);
        let t = td.min(tt);
        let start = i;
        while i < dets.len() && dets[i].timestamp == t {
            i += 1;
        }
        let th = (tt == t).then(|| {
            j += 1;
            j - 1
        });
        ticks.push(Tick { t, detections: start..i, thermal: th });
    }
    ticks
}

fn mode_at(session: &Session, t: f64, threshold: u32) -> SensorMode {
    let dets = session.detections();
    match nearest_before(dets, t).or(dets.first()) {
        Some(d) => select_mode(d.iso, threshold),
        None => SensorMode::Thermal,
    }
}

/// Box handed from a branch to the estimator.
#[derive(Debug, Clone, Copy)]
struct Observation {
    center: Vector2<f64>,
    width: f64,
    frame_width: u32,
}

/// Segments nearest in time to a tick, memoized per scan.
struct LidarView<'a> {
    scans: &'a [LidarScan],
    period: f64,
    cache: HashMap<usize, Option<LidarSegment>>,
}

impl<'a> LidarView<'a> {
    fn new(scans: &'a [LidarScan]) -> Self {
        let mut gaps: Vec<f64> = scans.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
        gaps.sort_by(f64::total_cmp);
        let period = gaps.get(gaps.len() / 2).copied().unwrap_or(0.0);
        Self { scans, period, cache: HashMap::new() }
    }

    fn target(&mut self, t: f64, cfg: &PipelineConfig) -> Option<&LidarSegment> {
        let idx = nearest_within(self.scans, t, self.period)?;
        let scans = self.scans;
        self.cache
            .entry(idx)
            .or_insert_with(|| {
                let l = &cfg.lidar;
                let params = SegmentParams {
                    zones: &l.zones,
                    gap_mm: l.gap_mm,
                    min_points: l.min_points,
                    convention: l.angle_convention,
                };
                select_target(&segment_scan(&scans[idx], &params), l.target).cloned()
            })
            .as_ref()
    }
}

/// Replays the branch logic tick by tick and hands each observed box to `visit`.
struct Replay<'a> {
    session: &'a Session,
    cfg: &'a PipelineConfig,
    opts: RunOptions,
    mono: Tracker,
    thermal: Tracker,
    stats: BranchStats,
}

impl<'a> Replay<'a> {
    fn new(session: &'a Session, cfg: &'a PipelineConfig, opts: RunOptions) -> Result<Self, PipelineError> {
        let tracker = || Tracker::new(cfg.tracker.clone()).map_err(|e| PipelineError::Config(e.to_string()));
        let layout_ok = session.lidar().iter().all(|s| s.points_per_degree == cfg.lidar.points_per_degree);
        if !layout_ok {
            return Err(PipelineError::Config(format!(
                "lidar.points_per_degree is {} but the scans differ",
                cfg.lidar.points_per_degree
            )));
        }
        if let Some(scan) = session.lidar().first() {
            for (i, z) in cfg.lidar.zones.iter().enumerate() {
                z.validate(scan.ranges.len()).map_err(|e| PipelineError::Config(format!("lidar.zones[{i}]: {e}")))?;
            }
        }
        Ok(Self { session, cfg, opts, mono: tracker()?, thermal: tracker()?, stats: BranchStats::default() })
    }

    fn step(&mut self, tick: &Tick, mode: SensorMode) -> Result<Option<Observation>, PipelineError> {
        self.stats.ticks += 1;
        let t = tick.t;
        let (measurements, frame_width) = match mode {
            SensorMode::Monocular => {
                if tick.detections.is_empty() {
                    self.stats.idle += 1;
                    return Ok(None);
                }
                self.stats.mono += 1;
                let group = &self.session.detections()[tick.detections.clone()];
                let mut kept: Vec<_> = group.iter().filter(|d| d.score >= self.cfg.min_score).collect();
                // Highest score first so bypass mode takes the best box.
                kept.sort_by(|a, b| b.score.total_cmp(&a.score));
                let ms: Vec<Measurement> = kept
                    .iter()
                    .map(|d| Measurement { center: Vector2::new(d.bbox.cx, d.bbox.cy), w: d.bbox.w, h: d.bbox.h })
                    .collect();
                (ms, group[0].frame_width)
            }
            SensorMode::Thermal => {
                let Some(idx) = tick.thermal else {
                    self.stats.idle += 1;
                    return Ok(None);
                };
                self.stats.thermal += 1;
                let seq = self.session.thermal.as_ref().ok_or(PipelineError::MissingThermalInput)?;
                let frame = seq.load_frame(idx).map_err(|e| stage_err(t, "thermal input")(e.to_string()))?;
                let id = seq.entries()[idx].frame_id;
                let det = detect_thermal(&frame, id, &self.cfg.thermal)
                    .map_err(|e| stage_err(t, "thermal detection")(e.to_string()))?;
                let [bx, by] = self.cfg.thermal.center_bias_px;
                let ms = det
                    .map(|d| Measurement {
                        center: Vector2::new(d.bbox.cx - bx, d.bbox.cy - by),
                        w: d.bbox.w,
                        h: d.bbox.h,
                    })
                    .into_iter()
                    .collect();
                (ms, frame.width)
            }
        };

        if self.opts.bypass_kf {
            return Ok(measurements.first().map(|m| Observation { center: m.center, width: m.w, frame_width }));
        }
        let tracker = match mode {
            SensorMode::Monocular => &mut self.mono,
            SensorMode::Thermal => &mut self.thermal,
        };
        let confirmed = tracker.step(t, &measurements).map_err(|e| stage_err(t, "tracker")(e.to_string()))?;
        let best =
            confirmed.into_iter().filter(|tr| tr.misses == 0).max_by(|a, b| a.hits.cmp(&b.hits).then(b.id.cmp(&a.id)));
        Ok(best.map(|tr| Observation { center: tr.center(), width: tr.w, frame_width }))
    }
}

/// Checks that every branch the session will route to has its inputs.
fn preflight(
    session: &Session,
    ticks: &[Tick],
    cfg: &PipelineConfig,
    calib: &CalibrationSet,
) -> Result<(), PipelineError> {
    if ticks.is_empty() {
        return Err(PipelineError::NoInput);
    }
    let mut active = [false; 2];
    for tick in ticks {
        match mode_at(session, tick.t, cfg.iso_threshold) {
            SensorMode::Monocular => active[0] = true,
            SensorMode::Thermal => active[1] = true,
        }
    }
    for (on, mode) in active.into_iter().zip([SensorMode::Monocular, SensorMode::Thermal]) {
        if on && calib.get(mode).is_none() {
            return Err(PipelineError::MissingCalibration(mode));
        }
    }
    if active[1] && session.thermal.as_ref().is_none_or(|s| s.is_empty()) {
        return Err(PipelineError::MissingThermalInput);
    }
    Ok(())
}

fn segment_depth(seg: &LidarSegment, cfg: &PipelineConfig) -> f64 {
    if cfg.lidar.project_to_optical_axis {
        seg.mean_distance * (seg.bearing_deg - cfg.lidar.forward_bearing_deg).to_radians().cos()
    } else {
        seg.mean_distance
    }
}

/// Calibration implied by a LIDAR segment and a box seen together, or `None`
/// when the segment bearing disagrees with where the box says the target is.
fn recalibrate(
    obs: &Observation,
    seg: &LidarSegment,
    current: &CalibrationRecord,
    cfg: &PipelineConfig,
) -> Option<CalibrationRecord> {
    let c_r = pixel_to_real(obs.center, obs.width, current.real_length_mm).ok()?;
    let depth = estimate_depth(obs.width, current).ok()?;
    let expected = cfg.lidar.forward_bearing_deg - c_r.x.atan2(depth).to_degrees();
    if (expected - seg.bearing_deg).abs() > cfg.lidar.bearing_gate_deg {
        return None;
    }
    let record = CalibrationRecord {
        distance_mm: segment_depth(seg, cfg),
        pixel_length: obs.width,
        real_length_mm: seg.length,
        ..*current
    };
    record.validate().ok().map(|_| record)
}

/// Runs the full pipeline over a session.
pub fn run_pipeline(
    session: &Session,
    calib: &CalibrationSet,
    cfg: &PipelineConfig,
    opts: RunOptions,
) -> Result<PipelineOutput, PipelineError> {
    let ticks = timeline(session);
    preflight(session, &ticks, cfg, calib)?;
    let mut replay = Replay::new(session, cfg, opts)?;
    let mut lidar = LidarView::new(session.lidar());
    let mut calib = calib.clone();
    let mut states: Vec<WorldState> = Vec::new();
    // Sum and count of accepted cut lengths per branch.
    let mut lengths = [(0.0f64, 0usize); 2];

    for tick in &ticks {
        let t = tick.t;
        let mode = mode_at(session, t, cfg.iso_threshold);
        let Some(obs) = replay.step(tick, mode)? else {
            continue;
        };
        let mut record = *calib.get(mode).ok_or(PipelineError::MissingCalibration(mode))?;
        if cfg.lidar.recalibrate {
            if let Some(mut fresh) = lidar.target(t, cfg).and_then(|seg| recalibrate(&obs, seg, &record, cfg)) {
                if cfg.lidar.length_update == LengthUpdate::RunningMean {
                    let acc = &mut lengths[(mode == SensorMode::Thermal) as usize];
                    acc.0 += fresh.real_length_mm;
                    acc.1 += 1;
                    fresh.real_length_mm = acc.0 / acc.1 as f64;
                }
                record = fresh;
                calib.set(record);
                replay.stats.recalibrations += 1;
            }
        }
        let err = stage_err(t, "state estimation");
        let c_r = pixel_to_real(obs.center, obs.width, record.real_length_mm).map_err(|e| err(e.to_string()))?;
        let depth = estimate_depth(obs.width, &record).map_err(|e| err(e.to_string()))?;
        let position = compose_world(c_r, depth, &record.mount);
        let vel = match states.last() {
            Some(prev) => velocity(position, prev.position, t - prev.timestamp).map_err(|e| err(e.to_string()))?,
            None => nalgebra::Vector3::zeros(),
        };
        states.push(WorldState { timestamp: t, position, velocity: vel, mode });
    }
    Ok(PipelineOutput { states, stats: replay.stats, calibration: calib })
}

/// First tick per branch where a tracked box and a LIDAR target co-occur,
/// turned into a calibration record. `base` supplies mounts; missing modes
/// get an identity mount.
pub fn find_calibrations(
    session: &Session,
    base: &CalibrationSet,
    cfg: &PipelineConfig,
) -> Result<Vec<CalibrationRecord>, PipelineError> {
    let ticks = timeline(session);
    if ticks.is_empty() {
        return Err(PipelineError::NoInput);
    }
    let mut replay = Replay::new(session, cfg, RunOptions::default())?;
    let mut lidar = LidarView::new(session.lidar());
    let mut found = CalibrationSet::default();
    for tick in &ticks {
        let mode = mode_at(session, tick.t, cfg.iso_threshold);
        if mode == SensorMode::Thermal && session.thermal.is_none() {
            replay.stats.ticks += 1;
            replay.stats.idle += 1;
            continue;
        }
        let Some(obs) = replay.step(tick, mode)? else {
            continue;
        };
        if found.get(mode).is_some() {
            continue;
        }
        let Some(seg) = lidar.target(tick.t, cfg) else {
            continue;
        };
        let record = CalibrationRecord {
            mode,
            distance_mm: segment_depth(seg, cfg),
            pixel_length: obs.width,
            real_length_mm: seg.length,
            f: obs.frame_width as f64,
            mount: base.get(mode).map(|r| r.mount).unwrap_or_default(),
        };
        if record.validate().is_ok() {
            found.set(record);
        }
        if found.mono.is_some() && found.thermal.is_some() {
            break;
        }
    }
    Ok(found.records())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{BBox, DetectionRecord, LidarLayout};

    fn det(t: f64, cx: f64, w: f64, iso: u32) -> DetectionRecord {
        DetectionRecord {
            timestamp: t,
            frame_id: (t * 60.0).round() as u64,
            bbox: BBox::new(cx, 0.0, w, w / 2.0),
            score: 0.95,
            iso,
            frame_width: 1920,
            frame_height: 1080,
        }
    }

    fn mono_calib() -> CalibrationSet {
        CalibrationSet::from_records(&[CalibrationRecord {
            mode: SensorMode::Monocular,
            distance_mm: 3000.0,
            pixel_length: 100.0,
            real_length_mm: 350.0,
            f: 1920.0,
            mount: Default::default(),
        }])
        .unwrap()
    }

    fn session(dets: Vec<DetectionRecord>) -> Session {
        Session { detections: Some(dets), ..Default::default() }
    }

    #[test]
    fn hover_emits_constant_position_and_zero_velocity() {
        let dets: Vec<_> = (0..120).map(|i| det(i as f64 / 60.0, 40.0, 100.0, 100)).collect();
        let out =
            run_pipeline(&session(dets), &mono_calib(), &PipelineConfig::default(), RunOptions::default()).unwrap();
        // Tracks are reported from their third update on.
        assert_eq!(out.states.len(), 118);
        for s in &out.states {
            assert!((s.position.x - 140.0).abs() < 1e-9);
            assert!((s.position.y - 3000.0).abs() < 1e-9);
            assert!(s.velocity.norm() < 1e-6);
        }
        assert_eq!(out.states[0].velocity, nalgebra::Vector3::zeros());
        assert!(out.states.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn bypass_passes_boxes_through() {
        let dets: Vec<_> = (0..10).map(|i| det(i as f64 / 60.0, 10.0 * i as f64, 100.0, 100)).collect();
        let opts = RunOptions { bypass_kf: true };
        let out = run_pipeline(&session(dets), &mono_calib(), &PipelineConfig::default(), opts).unwrap();
        assert_eq!(out.states.len(), 10);
        for (i, s) in out.states.iter().enumerate() {
            assert!((s.position.x - 35.0 * i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn high_iso_without_thermal_is_rejected() {
        let dets: Vec<_> = (0..10).map(|i| det(i as f64 / 60.0, 0.0, 100.0, 12800)).collect();
        let cfg = PipelineConfig::default();
        let err = run_pipeline(&session(dets.clone()), &mono_calib(), &cfg, RunOptions::default()).unwrap_err();
        assert_eq!(err, PipelineError::MissingCalibration(SensorMode::Thermal));
        let mut both = mono_calib();
        both.set(CalibrationRecord { mode: SensorMode::Thermal, f: 640.0, ..both.mono.unwrap() });
        let err = run_pipeline(&session(dets), &both, &cfg, RunOptions::default()).unwrap_err();
        assert_eq!(err, PipelineError::MissingThermalInput);
    }

    #[test]
    fn empty_session_is_rejected() {
        let err = run_pipeline(&Session::default(), &mono_calib(), &PipelineConfig::default(), RunOptions::default());
        assert_eq!(err.unwrap_err(), PipelineError::NoInput);
    }

    #[test]
    fn low_scores_are_ignored() {
        let mut dets: Vec<_> = (0..30).map(|i| det(i as f64 / 60.0, 0.0, 100.0, 100)).collect();
        dets.iter_mut().for_each(|d| d.score = 0.5);
        let out =
            run_pipeline(&session(dets), &mono_calib(), &PipelineConfig::default(), RunOptions::default()).unwrap();
        assert!(out.states.is_empty());
        assert_eq!(out.stats.mono, 30);
    }

    fn scan_with_target(t: f64, range: i32, first: usize, n: usize) -> LidarScan {
        let mut ranges = vec![0; 720];
        ranges[first..first + n].iter_mut().for_each(|r| *r = range);
        LidarScan::new(t, LidarLayout::default(), ranges).unwrap()
    }

    #[test]
    fn lidar_segment_recalibrates() {
        let dets: Vec<_> = (0..30).map(|i| det(i as f64 / 60.0, 0.0, 120.0, 100)).collect();
        // 12 beams centered on 90 degrees: beams 354..366.
        let scans: Vec<_> = (0..10).map(|i| scan_with_target(i as f64 / 40.0, 2500, 354, 12)).collect();
        let s = Session { detections: Some(dets), lidar: Some(scans), ..Default::default() };
        let out = run_pipeline(&s, &mono_calib(), &PipelineConfig::default(), RunOptions::default()).unwrap();
        assert!(out.stats.recalibrations > 0);
        let m = out.calibration.mono.unwrap();
        assert_eq!(m.distance_mm, 2500.0);
        assert_eq!(m.pixel_length, 120.0);
        assert!((m.real_length_mm - 2.0 * 2500.0 * 3f64.to_radians().tan()).abs() < 1e-9);
        let cal = find_calibrations(&s, &CalibrationSet::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(cal.len(), 1);
        assert_eq!((cal[0].distance_mm, cal[0].pixel_length, cal[0].f), (2500.0, 120.0, 1920.0));
    }

    #[test]
    fn off_bearing_segment_is_ignored() {
        let dets: Vec<_> = (0..30).map(|i| det(i as f64 / 60.0, 0.0, 120.0, 100)).collect();
        // Target at 30 degrees while the box is straight ahead.
        let scans: Vec<_> = (0..10).map(|i| scan_with_target(i as f64 / 40.0, 2500, 114, 12)).collect();
        let s = Session { detections: Some(dets), lidar: Some(scans), ..Default::default() };
        let out = run_pipeline(&s, &mono_calib(), &PipelineConfig::default(), RunOptions::default()).unwrap();
        assert_eq!(out.stats.recalibrations, 0);
    }

    #[test]
    fn counters_partition_ticks() {
        let dets: Vec<_> = (0..60).map(|i| det(i as f64 / 60.0, 0.0, 100.0, if i < 30 { 100 } else { 7000 })).collect();
        let mut both = mono_calib();
        both.set(CalibrationRecord { mode: SensorMode::Thermal, f: 640.0, ..both.mono.unwrap() });
        let ticks = timeline(&session(dets.clone()));
        assert_eq!(ticks.len(), 60);
        let s = session(dets);
        let modes: Vec<_> = ticks.iter().map(|t| mode_at(&s, t.t, 6400)).collect();
        assert_eq!(modes.iter().filter(|m| **m == SensorMode::Thermal).count(), 30);
    }
}
