//! Thermal-frame UAV detection: threshold, clean up, take the largest hot blob.

mod blobs;
mod morphology;
mod threshold;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{DetectionRecord, ThermalFrame};

pub use blobs::{extract_blobs, BlobBox};
pub use morphology::{binarize, close, dilate, erode, open, postprocess, BinaryMask};
pub use threshold::{histogram, max_correlation_threshold, GrayHistogram};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ThermalError {
    #[error("frame has no pixels")]
    EmptyFrame,
    #[error("histogram has fewer than two occupied gray levels")]
    DegenerateHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    pub open_radius: usize,
    pub close_radius: usize,
    /// ISO value stamped on thermal detections.
    pub iso: u32,
    /// Constant `(x, y)` pixel offset subtracted from thermal box centers.
    pub center_bias_px: [f64; 2],
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self { open_radius: 1, close_radius: 1, iso: 6400, center_bias_px: [0.0, 0.0] }
    }
}

/// Runs the full thermal chain on one frame.
///
/// Returns `Ok(None)` when the frame holds no object (no blob survives, or
/// the histogram has a single gray level). Thermal detections score 1.0.
pub fn detect_thermal(
    frame: &ThermalFrame,
    frame_id: u64,
    cfg: &ThermalConfig,
) -> Result<Option<DetectionRecord>, ThermalError> {
    let hist = histogram(frame)?;
    let t = match max_correlation_threshold(&hist) {
        Ok(t) => t,
        Err(ThermalError::DegenerateHistogram) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mask = postprocess(&binarize(frame, t), cfg.open_radius, cfg.close_radius);
    Ok(extract_blobs(&mask).into_iter().next().map(|blob| DetectionRecord {
        timestamp: frame.timestamp,
        frame_id,
        bbox: blob.bbox,
        score: 1.0,
        iso: cfg.iso,
        frame_width: frame.width,
        frame_height: frame.height,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with(blobs: &[(usize, usize, usize, usize)]) -> ThermalFrame {
        let (w, h) = (64usize, 48usize);
        let mut px: Vec<u8> = (0..w * h).map(|i| 28 + (i * 7 % 5) as u8).collect();
        for &(c, r, bw, bh) in blobs {
            for rr in r..r + bh {
                for cc in c..c + bw {
                    px[rr * w + cc] = 215 + (rr % 3) as u8;
                }
            }
        }
        ThermalFrame::new(0.5, w as u32, h as u32, px).unwrap()
    }

    #[test]
    fn finds_single_hot_blob() {
        let det = detect_thermal(&frame_with(&[(40, 10, 8, 6)]), 3, &ThermalConfig::default()).unwrap().unwrap();
        // Columns 40..48 center at 44 edge units, rows 10..16 center at 13.
        assert_eq!((det.bbox.cx, det.bbox.cy), (44.0 - 32.0, 24.0 - 13.0));
        assert_eq!((det.bbox.w, det.bbox.h), (8.0, 6.0));
        assert_eq!(det.score, 1.0);
        assert_eq!(det.frame_id, 3);
        assert_eq!(det.timestamp, 0.5);
    }

    #[test]
    fn background_only_yields_nothing() {
        assert!(detect_thermal(&frame_with(&[]), 0, &ThermalConfig::default()).unwrap().is_none());
        let flat = ThermalFrame::new(0.0, 8, 8, vec![40; 64]).unwrap();
        assert!(detect_thermal(&flat, 0, &ThermalConfig::default()).unwrap().is_none());
    }

    #[test]
    fn larger_of_two_blobs_wins() {
        let det = detect_thermal(&frame_with(&[(2, 2, 5, 5), (30, 20, 10, 9)]), 0, &ThermalConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!((det.bbox.w, det.bbox.h), (10.0, 9.0));
    }

    #[test]
    fn empty_frame_is_an_error() {
        let f = ThermalFrame { timestamp: 0.0, width: 0, height: 0, pixels: vec![] };
        assert_eq!(detect_thermal(&f, 0, &ThermalConfig::default()), Err(ThermalError::EmptyFrame));
    }
}
