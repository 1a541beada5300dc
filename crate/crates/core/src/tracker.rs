//! Constant-velocity Kalman tracking of bounding-box centers in pixel space.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("time step {0} s is not positive")]
    NonPositiveDt(f64),
    #[error("innovation covariance is singular")]
    NumericalBreakdown,
    #[error("step at t={t} precedes previous step at t={last}")]
    TimeRegression { t: f64, last: f64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// White-acceleration spectral density, px^2/s^3.
    pub q: f64,
    /// Measurement variance per axis, px^2.
    pub r: f64,
    /// Velocity variance of a freshly spawned track, px^2/s^2.
    pub init_velocity_var: f64,
    /// Association radius, px.
    pub gate_px: f64,
    /// Consecutive misses tolerated before a track is dropped.
    pub max_misses: u32,
    /// Updates needed before a track is reported.
    pub min_hits: u32,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self { q: 50.0, r: 4.0, init_velocity_var: 1.0e4, gate_px: 50.0, max_misses: 15, min_hits: 3 }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidConfig(m.into()));
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad("tracker.q must be >= 0");
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("tracker.r must be > 0");
        }
        if !(self.init_velocity_var > 0.0 && self.init_velocity_var.is_finite()) {
            return bad("tracker.init_velocity_var must be > 0");
        }
        if !(self.gate_px > 0.0) {
            return bad("tracker.gate_px must be > 0");
        }
        if self.max_misses < 1 {
            return bad("tracker.max_misses must be >= 1");
        }
        Ok(())
    }
}

/// Filter state of one track: `[cx, cy, vx, vy]` and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    /// Epoch of `x`.
    pub time: f64,
    /// Time of the last measurement update.
    pub last_update: f64,
    pub misses: u32,
    pub hits: u32,
    /// Box size of the latest matched measurement (not filtered).
    pub w: f64,
    pub h: f64,
}

impl TrackState {
    /// New track at a measurement, zero velocity.
    pub fn spawn(id: u64, t: f64, m: &Measurement, cfg: &KalmanConfig) -> Self {
        let v = cfg.init_velocity_var;
        Self {
            id,
            x: Vector4::new(m.center.x, m.center.y, 0.0, 0.0),
            p: Matrix4::from_diagonal(&Vector4::new(cfg.r, cfg.r, v, v)),
            time: t,
            last_update: t,
            misses: 0,
            hits: 1,
            w: m.w,
            h: m.h,
        }
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.x[0], self.x[1])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.x[2], self.x[3])
    }
}

/// One box observation handed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub center: Vector2<f64>,
    pub w: f64,
    pub h: f64,
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    let (a, b, c) = (dt * dt * dt / 3.0, dt * dt / 2.0, dt);
    let mut m = Matrix4::zeros();
    for (pos, vel) in [(0, 2), (1, 3)] {
        m[(pos, pos)] = q * a;
        m[(pos, vel)] = q * b;
        m[(vel, pos)] = q * b;
        m[(vel, vel)] = q * c;
    }
    m
}

const H: Matrix2x4<f64> = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);

fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Propagates the state `dt` seconds under constant velocity.
pub fn predict(track: &TrackState, dt: f64, cfg: &KalmanConfig) -> Result<TrackState, TrackerError> {
    if !(dt > 0.0) {
        return Err(TrackerError::NonPositiveDt(dt));
    }
    let f = transition(dt);
    Ok(TrackState {
        x: f * track.x,
        p: symmetrize(f * track.p * f.transpose() + process_noise(dt, cfg.q)),
        time: track.time + dt,
        ..track.clone()
    })
}

/// Fuses a center measurement using the Joseph-form covariance update.
pub fn update(track: &TrackState, z: Vector2<f64>, cfg: &KalmanConfig) -> Result<TrackState, TrackerError> {
    let r = Matrix2::identity() * cfg.r;
    let s = H * track.p * H.transpose() + r;
    let scale = s.abs().max();
    let det = s.determinant();
    if !det.is_finite() || !(scale > 0.0) || det <= f64::EPSILON * scale * scale {
        return Err(TrackerError::NumericalBreakdown);
    }
    let s_inv = s.try_inverse().ok_or(TrackerError::NumericalBreakdown)?;
    let k: Matrix4x2<f64> = track.p * H.transpose() * s_inv;
    let innovation = z - H * track.x;
    let i_kh = Matrix4::identity() - k * H;
    let p = i_kh * track.p * i_kh.transpose() + k * r * k.transpose();
    Ok(TrackState {
        x: track.x + k * innovation,
        p: symmetrize(p),
        last_update: track.time,
        misses: 0,
        hits: track.hits + 1,
        ..track.clone()
    })
}

/// Result of gating detections against predicted tracks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy nearest-neighbour association on Euclidean pixel distance.
///
/// Candidate pairs within `gate_px` are taken in order of distance, then track
/// id, then detection index; each track and detection is used at most once.
pub fn associate(tracks: &[(u64, Vector2<f64>)], detections: &[Vector2<f64>], gate_px: f64) -> Association {
    let mut pairs = Vec::new();
    for (ti, (id, c)) in tracks.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            let dist = (c - d).norm();
            if dist <= gate_px {
                pairs.push((dist, *id, di, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut out = Association::default();
    for (_, _, di, ti) in pairs {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            out.matches.push((ti, di));
        }
    }
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !track_used[i]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&i| !det_used[i]).collect();
    out
}

/// Track lifecycle manager; `step` must be called in time order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: KalmanConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
    last_time: Option<f64>,
}

impl Tracker {
    pub fn new(cfg: KalmanConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self { cfg, tracks: Vec::new(), next_id: 1, last_time: None })
    }

    pub fn config(&self) -> &KalmanConfig {
        &self.cfg
    }

    /// All live tracks, confirmed or not.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Advances to `t` and folds in this frame's measurements; returns confirmed tracks.
    pub fn step(&mut self, t: f64, measurements: &[Measurement]) -> Result<Vec<&TrackState>, TrackerError> {
        if let Some(last) = self.last_time {
            if t < last {
                return Err(TrackerError::TimeRegression { t, last });
            }
        }
        self.last_time = Some(t);

        for track in &mut self.tracks {
            let dt = t - track.time;
            if dt > 0.0 {
                *track = predict(track, dt, &self.cfg)?;
                track.time = t;
            }
        }
        let predicted: Vec<(u64, Vector2<f64>)> = self.tracks.iter().map(|tr| (tr.id, tr.center())).collect();
        let centers: Vec<Vector2<f64>> = measurements.iter().map(|m| m.center).collect();
        let assoc = associate(&predicted, &centers, self.cfg.gate_px);

        for &(ti, di) in &assoc.matches {
            let m = &measurements[di];
            let mut updated = update(&self.tracks[ti], m.center, &self.cfg)?;
            updated.w = m.w;
            updated.h = m.h;
            self.tracks[ti] = updated;
        }
        for &ti in &assoc.unmatched_tracks {
            self.tracks[ti].misses += 1;
        }
        let max_misses = self.cfg.max_misses;
        self.tracks.retain(|tr| tr.misses <= max_misses);
        for &di in &assoc.unmatched_detections {
            let track = TrackState::spawn(self.next_id, t, &measurements[di], &self.cfg);
            self.next_id += 1;
            self.tracks.push(track);
        }
        Ok(self.confirmed())
    }

    pub fn confirmed(&self) -> Vec<&TrackState> {
        self.tracks.iter().filter(|tr| tr.hits >= self.cfg.min_hits).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(x: [f64; 4], p_diag: f64) -> TrackState {
        TrackState {
            id: 1,
            x: Vector4::from(x),
            p: Matrix4::identity() * p_diag,
            time: 0.0,
            last_update: 0.0,
            misses: 0,
            hits: 1,
            w: 10.0,
            h: 10.0,
        }
    }

    fn meas(x: f64, y: f64) -> Measurement {
        Measurement { center: Vector2::new(x, y), w: 70.0, h: 40.0 }
    }

    #[test]
    fn predict_moves_by_velocity() {
        let s = predict(&state([0.0, 0.0, 1.0, 0.0], 1.0), 1.0, &KalmanConfig::default()).unwrap();
        assert_eq!(s.center(), Vector2::new(1.0, 0.0));
        assert_eq!(s.velocity(), Vector2::new(1.0, 0.0));
    }

    #[test]
    fn predict_rejects_non_positive_dt() {
        let s = state([0.0; 4], 1.0);
        assert_eq!(predict(&s, 0.0, &KalmanConfig::default()), Err(TrackerError::NonPositiveDt(0.0)));
    }

    #[test]
    fn predict_semigroup_without_noise() {
        let cfg = KalmanConfig { q: 0.0, ..Default::default() };
        let s = state([3.0, -2.0, 0.5, 4.0], 2.0);
        let twice = predict(&predict(&s, 1.0, &cfg).unwrap(), 1.0, &cfg).unwrap();
        let once = predict(&s, 2.0, &cfg).unwrap();
        assert_eq!(twice.x, once.x);
        assert_eq!(twice.p, once.p);
    }

    #[test]
    fn predict_grows_trace_with_noise() {
        let s = state([0.0; 4], 1.0);
        let p = predict(&s, 0.1, &KalmanConfig::default()).unwrap();
        // F P F^T adds dt^2 to each position variance; Q adds q dt^3/3 and q dt.
        let expected = 4.0 + 2.0 * 0.01 + 2.0 * 50.0 * (0.001 / 3.0 + 0.1);
        assert!((p.p.trace() - expected).abs() < 1e-12);
        assert!(p.p.trace() > s.p.trace());
    }

    #[test]
    fn tiny_measurement_noise_snaps_to_measurement() {
        let cfg = KalmanConfig { r: 1e-12, ..Default::default() };
        let s = update(&state([5.0, 5.0, 0.0, 0.0], 4.0), Vector2::new(7.0, -3.0), &cfg).unwrap();
        assert!((s.center() - Vector2::new(7.0, -3.0)).norm() <= 1e-6);
    }

    /// Hand-run scalar recursion: k = p / (p + r), x += k (z - x), p = p r / (p + r).
    fn scalar_recursion(x0: f64, p0: f64, r: f64, z: f64, n: usize) -> (f64, f64) {
        let (mut x, mut p) = (x0, p0);
        for _ in 0..n {
            let k = p / (p + r);
            x += k * (z - x);
            p = p * r / (p + r);
        }
        (x, p)
    }

    #[test]
    fn repeated_updates_follow_scalar_recursion() {
        let cfg = KalmanConfig::default();
        let z = Vector2::new(12.0, -4.0);
        for p0 in [4.0, 1.0e4] {
            let mut s = state([0.0; 4], p0);
            for _ in 0..10 {
                s = update(&s, z, &cfg).unwrap();
            }
            let (x, p) = scalar_recursion(0.0, p0, cfg.r, 12.0, 10);
            assert!((s.x[0] - x).abs() < 1e-9);
            assert!((s.p[(0, 0)] - p).abs() < 1e-9);
        }
        // Residual after n updates is e0 r / (r + n p0): 12 * 4 / 100004.
        let mut s = state([0.0; 4], 1.0e4);
        for _ in 0..10 {
            s = update(&s, z, &cfg).unwrap();
        }
        assert!((s.center() - z).norm() <= 1e-3);
    }

    #[test]
    fn update_never_increases_position_variance() {
        let mut s = state([0.0; 4], 9.0);
        s.p[(0, 2)] = 2.0;
        s.p[(2, 0)] = 2.0;
        let post = update(&s, Vector2::new(1.0, 1.0), &KalmanConfig::default()).unwrap();
        let diff = s.p.fixed_view::<2, 2>(0, 0) - post.p.fixed_view::<2, 2>(0, 0);
        assert!(diff.symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn associate_within_gate() {
        let t = [(1u64, Vector2::new(0.0, 0.0))];
        let d = [Vector2::new(3.0, 4.0)];
        assert_eq!(associate(&t, &d, 10.0).matches, vec![(0, 0)]);
        let a = associate(&t, &d, 4.0);
        assert!(a.matches.is_empty());
        assert_eq!((a.unmatched_tracks, a.unmatched_detections), (vec![0], vec![0]));
    }

    /// Minimum-total-distance assignment by enumerating permutations.
    fn exhaustive(tracks: &[Vector2<f64>], dets: &[Vector2<f64>], gate: f64) -> Vec<(usize, usize)> {
        fn rec(
            i: usize,
            t: &[Vector2<f64>],
            d: &[Vector2<f64>],
            gate: f64,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut (usize, f64, Vec<(usize, usize)>),
        ) {
            if i == t.len() {
                let cost: f64 = cur.iter().map(|&(a, b)| (t[a] - d[b]).norm()).sum();
                if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1) {
                    *best = (cur.len(), cost, cur.clone());
                }
                return;
            }
            rec(i + 1, t, d, gate, used, cur, best);
            for j in 0..d.len() {
                if !used[j] && (t[i] - d[j]).norm() <= gate {
                    used[j] = true;
                    cur.push((i, j));
                    rec(i + 1, t, d, gate, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = (0, f64::INFINITY, Vec::new());
        rec(0, tracks, dets, gate, &mut vec![false; dets.len()], &mut Vec::new(), &mut best);
        best.2.sort();
        best.2
    }

    #[test]
    fn crosswise_pairs_match_their_nearest() {
        let tracks = [Vector2::new(0.0, 0.0), Vector2::new(100.0, 0.0)];
        let dets = [Vector2::new(98.0, 3.0), Vector2::new(4.0, -2.0)];
        let ids: Vec<(u64, Vector2<f64>)> = tracks.iter().enumerate().map(|(i, c)| (i as u64, *c)).collect();
        let mut greedy = associate(&ids, &dets, 50.0).matches;
        greedy.sort();
        assert_eq!(greedy, vec![(0, 1), (1, 0)]);
        assert_eq!(greedy, exhaustive(&tracks, &dets, 50.0));
    }

    #[test]
    fn three_by_three_well_separated_agrees_with_exhaustive() {
        let tracks = [Vector2::new(0.0, 0.0), Vector2::new(200.0, 0.0), Vector2::new(0.0, 200.0)];
        let dets = [Vector2::new(5.0, 195.0), Vector2::new(-3.0, 2.0), Vector2::new(190.0, 8.0)];
        let ids: Vec<(u64, Vector2<f64>)> = tracks.iter().enumerate().map(|(i, c)| (i as u64, *c)).collect();
        let mut greedy = associate(&ids, &dets, 50.0).matches;
        greedy.sort();
        assert_eq!(greedy, exhaustive(&tracks, &dets, 50.0));
    }

    #[test]
    fn bootstrap_single_detection() {
        let mut tr = Tracker::new(KalmanConfig { min_hits: 1, ..Default::default() }).unwrap();
        let confirmed = tr.step(0.0, &[meas(10.0, 20.0)]).unwrap();
        assert_eq!(confirmed.len(), 1);
        assert_eq!(confirmed[0].center(), Vector2::new(10.0, 20.0));
    }

    #[test]
    fn track_dropped_after_max_misses() {
        let cfg = KalmanConfig { max_misses: 3, min_hits: 1, ..Default::default() };
        let mut tr = Tracker::new(cfg).unwrap();
        tr.step(0.0, &[meas(0.0, 0.0)]).unwrap();
        for k in 1..=3 {
            assert_eq!(tr.step(k as f64 / 30.0, &[]).unwrap().len(), 1);
        }
        assert!(tr.step(4.0 / 30.0, &[]).unwrap().is_empty());
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn confirmation_needs_min_hits() {
        let mut tr = Tracker::new(KalmanConfig::default()).unwrap();
        assert!(tr.step(0.0, &[meas(0.0, 0.0)]).unwrap().is_empty());
        assert!(tr.step(0.1, &[meas(1.0, 0.0)]).unwrap().is_empty());
        assert_eq!(tr.step(0.2, &[meas(2.0, 0.0)]).unwrap().len(), 1);
    }

    #[test]
    fn time_regression_is_rejected() {
        let mut tr = Tracker::new(KalmanConfig::default()).unwrap();
        tr.step(1.0, &[]).unwrap();
        assert!(matches!(tr.step(0.5, &[]), Err(TrackerError::TimeRegression { .. })));
    }

    #[test]
    fn ids_are_never_reused() {
        let cfg = KalmanConfig { max_misses: 1, min_hits: 1, gate_px: 5.0, ..Default::default() };
        let mut tr = Tracker::new(cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for k in 0..20 {
            let x = if k % 3 == 0 { 0.0 } else { 500.0 * k as f64 };
            for t in tr.step(k as f64, &[meas(x, 0.0)]).unwrap() {
                seen.insert(t.id);
            }
        }
        let max = *seen.iter().max().unwrap();
        assert_eq!(seen.len() as u64, max);
    }

    #[test]
    fn cv_target_rms_below_noise_std() {
        let cfg = KalmanConfig::default();
        let mut tr = Tracker::new(cfg.clone()).unwrap();
        let mut sq = 0.0;
        let mut n = 0;
        for k in 0..60 {
            let t = k as f64 / 30.0;
            let truth = Vector2::new(-100.0 + 60.0 * t, 40.0 - 15.0 * t);
            let confirmed = tr.step(t, &[Measurement { center: truth, w: 70.0, h: 40.0 }]).unwrap();
            if let Some(track) = confirmed.first() {
                sq += (track.center() - truth).norm_squared();
                n += 1;
            }
        }
        assert!(n >= 55);
        assert!((sq / n as f64).sqrt() <= cfg.r.sqrt());
    }

    #[test]
    fn exact_cv_motion_converges_without_noise() {
        let cfg = KalmanConfig { q: 0.0, r: 1e-12, ..Default::default() };
        let mut s = state([0.0, 0.0, 0.0, 0.0], 1.0);
        let mut err = f64::INFINITY;
        for k in 1..=3 {
            let t = k as f64 * 0.1;
            s = predict(&s, 0.1, &cfg).unwrap();
            s = update(&s, Vector2::new(30.0 * t, -12.0 * t), &cfg).unwrap();
            err = (s.center() - Vector2::new(30.0 * t, -12.0 * t)).norm();
        }
        assert!(err <= 1e-6);
    }

    proptest! {
        #[test]
        fn transitions_are_deterministic(x in -500.0f64..500.0, vx in -50.0f64..50.0, dt in 0.001f64..1.0) {
            let cfg = KalmanConfig::default();
            let s = state([x, -x, vx, 1.0], 3.0);
            prop_assert_eq!(predict(&s, dt, &cfg).unwrap(), predict(&s, dt, &cfg).unwrap());
            let z = Vector2::new(x + 1.0, 2.0);
            prop_assert_eq!(update(&s, z, &cfg).unwrap(), update(&s, z, &cfg).unwrap());
        }
    }
}
