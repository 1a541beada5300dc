//! Synthetic sessions pushed through the whole pipeline.

use quadtrack::estimator::{find_calibrations, run_pipeline, CalibrationSet, PipelineOutput, RunOptions, SensorMode};
use quadtrack::eval::{evaluate, EvalReport};
use quadtrack::io::{load_session, Session};
use quadtrack::synth::{gen_session, CameraSpec, IsoStep, ScenarioSpec, Trajectory};
use quadtrack::PipelineConfig;

fn circle(seed: u64, duration: f64) -> ScenarioSpec {
    let traj = Trajectory::Circle { center: [0.0, 3000.0, 1000.0], radius: 1000.0, speed: 500.0, tilt_deg: 45.0 };
    let mut s = ScenarioSpec::new(seed, duration, traj);
    s.thermal_camera.enabled = false;
    s
}

fn run(spec: &ScenarioSpec) -> (Session, PipelineOutput, EvalReport) {
    let dir = tempfile::tempdir().unwrap();
    let out = gen_session(spec, dir.path()).unwrap();
    let session = load_session(&out.manifest).unwrap();
    let calib = CalibrationSet::load(&out.calibration).unwrap();
    let res = run_pipeline(&session, &calib, &PipelineConfig::default(), RunOptions::default()).unwrap();
    let report = evaluate(&res.states, session.ground_truth(), session.presence.as_deref()).unwrap();
    (session, res, report)
}

#[test]
fn noiseless_circle_tracks_closely() {
    let (_, res, r) = run(&circle(1, 20.0));
    for p in r.percentage {
        assert!(p.unwrap() <= 0.01, "{:?}", r.percentage);
    }
    assert!(res.stats.recalibrations > 0);
    assert!(r.correct_rate >= 0.95);
}

#[test]
fn jittered_circle_stays_bounded() {
    let mut spec = circle(2, 20.0);
    spec.noise.jitter_px = 2.0;
    spec.noise.miss_prob = 0.05;
    let (_, _, r) = run(&spec);
    for p in r.percentage {
        assert!(p.unwrap() <= 0.102, "{:?}", r.percentage);
    }
}

#[test]
fn hover_has_zero_velocity() {
    let mut spec = ScenarioSpec::new(3, 5.0, Trajectory::Hover { position: [250.0, 3000.0, 1000.0] });
    spec.thermal_camera.enabled = false;
    let (_, res, r) = run(&spec);
    assert!(!res.states.is_empty());
    assert_eq!(res.states[0].velocity.norm(), 0.0);
    for s in &res.states {
        assert!(s.velocity.norm() <= 1e-6, "{}", s.velocity);
    }
    // Lateral scale rides on the LIDAR cut length, which is quantized to one
    // beam out of roughly 27 across the airframe.
    assert!(r.mae[0] <= 250.0 * 0.025, "{:?}", r.mae);
    assert!(r.mae[1] <= 3000.0 * 0.002, "{:?}", r.mae);
    assert!(r.mae[2] <= 1e-6, "{:?}", r.mae);
}

#[test]
fn mixed_lighting_uses_both_branches() {
    let traj = Trajectory::Line { start: [-600.0, 2800.0, 1000.0], end: [600.0, 3400.0, 1300.0], speed: 400.0 };
    let mut spec = ScenarioSpec::new(4, 6.0, traj);
    spec.thermal_camera = CameraSpec { width: 320, height: 256, hfov_deg: 50.0, enabled: true };
    spec.iso_schedule = vec![IsoStep { start: 0.0, iso: 800 }, IsoStep { start: 3.0, iso: 12800 }];
    let (session, res, r) = run(&spec);
    let s = res.stats;
    assert_eq!(s.mono + s.thermal + s.idle, s.ticks);
    // Thermal frames land on detection timestamps, so the union is the detection clock.
    let mut stamps: Vec<f64> = session.detections().iter().map(|d| d.timestamp).collect();
    stamps.dedup();
    assert_eq!(s.ticks, stamps.len());
    assert!(s.mono > 0 && s.thermal > 0);
    let modes: Vec<SensorMode> = res.states.iter().map(|s| s.mode).collect();
    assert!(modes.contains(&SensorMode::Monocular) && modes.contains(&SensorMode::Thermal));
    assert!(res.states.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    // Thermal boxes are whole pixels, about 1/30 of the box width here.
    for p in r.percentage {
        assert!(p.unwrap() <= 0.05, "{:?}", r.percentage);
    }
}

#[test]
fn calibration_recovered_from_plane_crossing() {
    let spec = circle(5, 15.0);
    let dir = tempfile::tempdir().unwrap();
    let out = gen_session(&spec, dir.path()).unwrap();
    let session = load_session(&out.manifest).unwrap();
    let found = find_calibrations(&session, &CalibrationSet::default(), &PipelineConfig::default()).unwrap();
    assert_eq!(found.len(), 1);
    let c = found[0];
    assert_eq!(c.mode, SensorMode::Monocular);
    // Box width and depth agree with the pinhole model to within LIDAR range rounding.
    let k = spec.mono_camera.focal_px() * spec.uav_length;
    assert!((c.distance_mm * c.pixel_length - k).abs() / k < 2e-3, "{c:?}");
    let beam = 2.0 * c.distance_mm * (0.25f64).to_radians().tan();
    assert!((c.real_length_mm - spec.uav_length).abs() <= beam, "{c:?}");
    assert_eq!(c.f, 1920.0);
}
