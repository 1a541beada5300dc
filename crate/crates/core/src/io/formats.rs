//! Text log formats: LIDAR CSV, detection JSON-lines, ground-truth CSV,
//! thermal frame index and per-frame presence flags.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, DetectionRecord, GroundTruthSample, IoError, LidarLayout, LidarScan, PresenceFlag};

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::MissingFile(path.to_path_buf()),
        _ => IoError::Io(e),
    })
}

/// Non-empty lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> IoError {
    IoError::MalformedRecord { path: path.to_path_buf(), location: line, reason: reason.into() }
}

fn check_order(path: &Path, stamps: impl Iterator<Item = f64>, strict: bool) -> Result<(), IoError> {
    let mut prev = f64::NEG_INFINITY;
    for (index, t) in stamps.enumerate() {
        if t < prev || (strict && t == prev) {
            return Err(IoError::NonMonotonicTimestamps { path: path.to_path_buf(), index });
        }
        prev = t;
    }
    Ok(())
}

fn is_header(line: &str) -> bool {
    line.trim_start().starts_with("timestamp")
}

fn parse_f64(path: &Path, line: usize, field: &str, name: &str) -> Result<f64, IoError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| malformed(path, line, format!("bad {name} {field:?}")))
}

/// Reads `timestamp,r0,r1,...` lines. Beam count must match `layout`.
pub fn read_lidar_csv(path: &Path, layout: LidarLayout) -> Result<Vec<LidarScan>, IoError> {
    let mut scans = Vec::new();
    for (ln, line) in lines(path)? {
        let mut fields = line.split(',');
        let t = parse_f64(path, ln, fields.next().unwrap_or(""), "timestamp")?;
        let ranges = fields
            .map(|f| f.trim().parse::<i32>().map_err(|_| malformed(path, ln, format!("bad range {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        scans.push(LidarScan::new(t, layout, ranges).map_err(|r| malformed(path, ln, r))?);
    }
    check_order(path, scans.iter().map(|s| s.timestamp), true)?;
    Ok(scans)
}

pub fn write_lidar_csv<W: Write>(out: &mut W, scans: &[LidarScan]) -> std::io::Result<()> {
    for scan in scans {
        write!(out, "{}", scan.timestamp)?;
        for r in &scan.ranges {
            write!(out, ",{r}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    timestamp: f64,
    frame_id: u64,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    score: f64,
    iso: u32,
    frame_width: u32,
    frame_height: u32,
}

impl From<&DetectionRecord> for DetectionLine {
    fn from(d: &DetectionRecord) -> Self {
        Self {
            timestamp: d.timestamp,
            frame_id: d.frame_id,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            score: d.score,
            iso: d.iso,
            frame_width: d.frame_width,
            frame_height: d.frame_height,
        }
    }
}

impl From<DetectionLine> for DetectionRecord {
    fn from(d: DetectionLine) -> Self {
        Self {
            timestamp: d.timestamp,
            frame_id: d.frame_id,
            bbox: BBox::new(d.cx, d.cy, d.w, d.h),
            score: d.score,
            iso: d.iso,
            frame_width: d.frame_width,
            frame_height: d.frame_height,
        }
    }
}

/// Reads detection JSON-lines. Several detections may share a timestamp.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in lines(path)? {
        let parsed: DetectionLine = serde_json::from_str(&line).map_err(|e| malformed(path, ln, e.to_string()))?;
        let record = DetectionRecord::from(parsed);
        record.validate().map_err(|r| malformed(path, ln, r))?;
        out.push(record);
    }
    check_order(path, out.iter().map(|d| d.timestamp), false)?;
    Ok(out)
}

pub fn write_detections<W: Write>(out: &mut W, records: &[DetectionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &DetectionLine::from(r))?;
        writeln!(out)?;
    }
    Ok(())
}

/// Reads `timestamp,x,y,z` rows (mm). A leading `timestamp,...` header is skipped.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthSample>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in lines(path)? {
        if out.is_empty() && is_header(&line) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(path, ln, format!("expected 4 fields, got {}", fields.len())));
        }
        let t = parse_f64(path, ln, fields[0], "timestamp")?;
        let mut position = [0.0; 3];
        for (axis, f) in position.iter_mut().zip(&fields[1..]) {
            *axis = parse_f64(path, ln, f, "coordinate")?;
        }
        out.push(GroundTruthSample { timestamp: t, position });
    }
    check_order(path, out.iter().map(|s| s.timestamp), true)?;
    Ok(out)
}

pub fn write_ground_truth<W: Write>(out: &mut W, samples: &[GroundTruthSample]) -> std::io::Result<()> {
    writeln!(out, "timestamp,x,y,z")?;
    for s in samples {
        let [x, y, z] = s.position;
        writeln!(out, "{},{x},{y},{z}", s.timestamp)?;
    }
    Ok(())
}

/// Reads `timestamp,visible` rows (`visible` is 0 or 1).
pub fn read_presence(path: &Path) -> Result<Vec<PresenceFlag>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in lines(path)? {
        if out.is_empty() && is_header(&line) {
            continue;
        }
        let (t, v) = line.split_once(',').ok_or_else(|| malformed(path, ln, "expected timestamp,visible"))?;
        let timestamp = parse_f64(path, ln, t, "timestamp")?;
        let visible = match v.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(malformed(path, ln, format!("bad visibility flag {other:?}"))),
        };
        out.push(PresenceFlag { timestamp, visible });
    }
    check_order(path, out.iter().map(|p| p.timestamp), true)?;
    Ok(out)
}

pub fn write_presence<W: Write>(out: &mut W, flags: &[PresenceFlag]) -> std::io::Result<()> {
    writeln!(out, "timestamp,visible")?;
    for f in flags {
        writeln!(out, "{},{}", f.timestamp, u8::from(f.visible))?;
    }
    Ok(())
}

/// One line of the thermal sequence index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalIndexEntry {
    pub frame_id: u64,
    pub timestamp: f64,
}

pub fn read_thermal_index(path: &Path) -> Result<Vec<ThermalIndexEntry>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in lines(path)? {
        let e: ThermalIndexEntry = serde_json::from_str(&line).map_err(|e| malformed(path, ln, e.to_string()))?;
        if !e.timestamp.is_finite() {
            return Err(malformed(path, ln, "timestamp is not finite"));
        }
        out.push(e);
    }
    check_order(path, out.iter().map(|e| e.timestamp), true)?;
    Ok(out)
}

pub fn write_thermal_index<W: Write>(out: &mut W, entries: &[ThermalIndexEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *out, e)?;
        writeln!(out)?;
    }
    Ok(())
}
