//! Multi-sensor detection, tracking and localization of a small quadcopter.
//!
//! The pipeline stages are:
//!
//! 1. **io**: sensor record types, on-disk log formats and session loading.
//! 2. **thermal**: histogram thresholding, binary morphology and blob extraction.
//! 3. **lidar**: planar scan segmentation and per-segment distance/length.
//! 4. **tracker**: constant-velocity Kalman tracking of the bounding-box center.
//! 5. **estimator**: ISO mode switch, pixel-to-world conversion and velocity.
//! 6. **eval**: ground-truth interpolation, error metrics and reports.
//!
//! [`synth`] renders complete synthetic sessions used as test oracles, and
//! [`config`] holds the pipeline configuration shared by the command line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod estimator;
pub mod eval;
pub mod io;
pub mod lidar;
pub mod synth;
pub mod thermal;
pub mod tracker;

pub use config::PipelineConfig;
pub use io::{BBox, DetectionRecord, GroundTruthSample, LidarScan, Session, ThermalFrame};
