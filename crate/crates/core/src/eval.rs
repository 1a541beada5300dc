//! Trajectory evaluation against interpolated ground truth.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{SensorMode, WorldState};
use crate::io::{GroundTruthSample, PresenceFlag};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("t={t} outside ground truth range [{first}, {last}]")]
    OutOfRange { t: f64, first: f64, last: f64 },
    #[error("no estimate falls inside the ground truth time range")]
    NoOverlap,
}

/// Largest clock difference at which an estimate counts for a presence flag, seconds.
pub const PRESENCE_TOLERANCE_S: f64 = 1e-3;

/// Piecewise-linear ground truth position at `t`.
pub fn interpolate_gt(samples: &[GroundTruthSample], t: f64) -> Result<Vector3<f64>, EvalError> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(EvalError::OutOfRange { t, first: f64::NAN, last: f64::NAN }),
    };
    if !(t >= first.timestamp && t <= last.timestamp) {
        return Err(EvalError::OutOfRange { t, first: first.timestamp, last: last.timestamp });
    }
    let k = samples.partition_point(|s| s.timestamp <= t);
    if k == samples.len() {
        return Ok(Vector3::from(last.position));
    }
    let (a, b) = (&samples[k - 1], &samples[k]);
    let p0 = Vector3::from(a.position);
    if t == a.timestamp {
        return Ok(p0);
    }
    let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
    Ok(p0 + (Vector3::from(b.position) - p0) * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean absolute error per axis, mm.
    pub mae: [f64; 3],
    /// `mae / extent` per axis; `None` where the extent is zero.
    pub percentage: [Option<f64>; 3],
    /// Ground-truth bounding-box size per axis over the evaluated window, mm.
    pub extent: [f64; 3],
    pub correct_rate: f64,
    pub n_compared: usize,
    /// Whether `correct_rate` came from presence flags.
    pub presence_used: bool,
}

impl EvalReport {
    /// Aligned plain-text table, one row of MAE and percentage per axis.
    pub fn to_table(&self, label: &str) -> String {
        let pct = |p: Option<f64>| p.map_or("n/a".to_string(), |v| format!("{:.1}%", v * 100.0));
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}{:^30}{:^27}", "", "Mean Absolute Error (mm)", "Percentage Error");
        let _ = writeln!(s, "{:<12}{:>10}{:>10}{:>10}{:>9}{:>9}{:>9}", "", "X", "Y", "Z", "X", "Y", "Z");
        let _ = writeln!(
            s,
            "{:<12}{:>10.1}{:>10.1}{:>10.1}{:>9}{:>9}{:>9}",
            label,
            self.mae[0],
            self.mae[1],
            self.mae[2],
            pct(self.percentage[0]),
            pct(self.percentage[1]),
            pct(self.percentage[2])
        );
        let _ = writeln!(
            s,
            "extent (mm) {:>10.1}{:>10.1}{:>10.1}   correct rate {:.1}%   compared {}",
            self.extent[0],
            self.extent[1],
            self.extent[2],
            self.correct_rate * 100.0,
            self.n_compared
        );
        s
    }
}

/// Compares estimates against ground truth at the estimate timestamps.
pub fn evaluate(
    estimates: &[WorldState],
    gt: &[GroundTruthSample],
    presence: Option<&[PresenceFlag]>,
) -> Result<EvalReport, EvalError> {
    let mut sum = Vector3::zeros();
    let mut window: Option<(f64, f64)> = None;
    let mut n = 0usize;
    for e in estimates {
        let Ok(truth) = interpolate_gt(gt, e.timestamp) else {
            continue;
        };
        sum += (e.position - truth).abs();
        n += 1;
        window = Some(match window {
            None => (e.timestamp, e.timestamp),
            Some((a, b)) => (a.min(e.timestamp), b.max(e.timestamp)),
        });
    }
    let (a, b) = window.ok_or(EvalError::NoOverlap)?;
    let mae = sum / n as f64;

    let mut lo = interpolate_gt(gt, a)?;
    let mut hi = lo;
    let inner = gt.iter().filter(|s| s.timestamp > a && s.timestamp < b).map(|s| Vector3::from(s.position));
    for p in inner.chain(std::iter::once(interpolate_gt(gt, b)?)) {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let extent = hi - lo;
    let percentage = [0, 1, 2].map(|i| (extent[i] > 0.0).then(|| mae[i] / extent[i]));

    let (correct_rate, presence_used) = match presence {
        Some(flags) => (correct_rate(estimates, flags), true),
        None => (1.0, false),
    };
    Ok(EvalReport { mae: mae.into(), percentage, extent: extent.into(), correct_rate, n_compared: n, presence_used })
}

/// Share of visible frames that received an estimate.
pub fn correct_rate(estimates: &[WorldState], flags: &[PresenceFlag]) -> f64 {
    let mut times: Vec<f64> = estimates.iter().map(|e| e.timestamp).collect();
    times.sort_by(f64::total_cmp);
    let visible: Vec<f64> = flags.iter().filter(|f| f.visible).map(|f| f.timestamp).collect();
    if visible.is_empty() {
        return 1.0;
    }
    let hit = |t: f64| {
        let k = times.partition_point(|&x| x < t - PRESENCE_TOLERANCE_S);
        times.get(k).is_some_and(|&x| x <= t + PRESENCE_TOLERANCE_S)
    };
    visible.iter().filter(|&&t| hit(t)).count() as f64 / visible.len() as f64
}

/// Frames per second; zero frames give zero.
pub fn throughput(frames: usize, wall_time: f64) -> f64 {
    if frames == 0 {
        return 0.0;
    }
    frames as f64 / wall_time
}

const AXES: [&str; 3] = ["x", "y", "z"];

fn mode_color(mode: SensorMode) -> &'static str {
    match mode {
        SensorMode::Monocular => "#1f5fbf",
        SensorMode::Thermal => "#2a9d3a",
    }
}

/// Estimate-vs-truth curve for one axis as a standalone SVG document.
pub fn axis_svg(estimates: &[WorldState], gt: &[GroundTruthSample], axis: usize) -> String {
    let (w, h, pad) = (900.0, 300.0, 40.0);
    let pts_gt: Vec<(f64, f64)> = gt.iter().map(|s| (s.timestamp, s.position[axis])).collect();
    let pts_est: Vec<(f64, f64, SensorMode)> =
        estimates.iter().map(|e| (e.timestamp, e.position[axis], e.mode)).collect();
    let all = pts_gt.iter().copied().chain(pts_est.iter().map(|p| (p.0, p.1)));
    let (mut t0, mut t1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (t, v) in all {
        t0 = t0.min(t);
        t1 = t1.max(t);
        v0 = v0.min(v);
        v1 = v1.max(v);
    }
    if !t0.is_finite() {
        (t0, t1, v0, v1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let sx = |t: f64| pad + (t - t0) / span(t0, t1) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - v0) / span(v0, v1) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{} (mm) vs time (s), [{:.1}, {:.1}] mm over [{:.2}, {:.2}] s</text>"#,
        AXES[axis].to_uppercase(),
        v0,
        v1,
        t0,
        t1
    );
    let poly: Vec<String> = pts_gt.iter().map(|&(t, v)| format!("{:.2},{:.2}", sx(t), sy(v))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#d62728" stroke-width="1.5" points="{}"/>"##, poly.join(" "));
    for (t, v, m) in pts_est {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2" fill="{}"/>"#, sx(t), sy(v), mode_color(m));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `x.svg`, `y.svg` and `z.svg` into `dir`.
pub fn write_plots(dir: &Path, estimates: &[WorldState], gt: &[GroundTruthSample]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, name) in AXES.iter().enumerate() {
        std::fs::write(dir.join(format!("{name}.svg")), axis_svg(estimates, gt, i))?;
    }
    Ok(())
}
