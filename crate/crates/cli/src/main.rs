use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quadtrack::estimator::{
    find_calibrations, read_trajectory, run_pipeline, write_trajectory, CalibrationSet, PipelineError, RunOptions,
};
use quadtrack::eval::{evaluate, write_plots, EvalError};
use quadtrack::io::{load_session, read_ground_truth, read_presence};
use quadtrack::lidar::AngleConvention;
use quadtrack::synth::{gen_session, ScenarioSpec, SynthError, CALIBRATION};
use quadtrack::PipelineConfig;

const EXIT_OTHER: u8 = 1;
const EXIT_SPEC: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_EVAL: u8 = 4;
const EXIT_NO_COOCCURRENCE: u8 = 5;

#[derive(Parser)]
#[command(name = "quadtrack", version, about = "UAV position tracking from camera, thermal and 2D LIDAR logs")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to missing keys
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write per-axis SVG curves next to the evaluation report
    #[arg(long, global = true)]
    plot: bool,
    /// Estimate from raw detection boxes instead of Kalman tracks
    #[arg(long, global = true)]
    bypass_kf: bool,
    /// Cut-length angle convention, `as-printed` or `half-angle`
    #[arg(long, global = true, value_name = "CONVENTION", value_parser = parse_convention)]
    angle_convention: Option<AngleConvention>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session from a scenario file
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Run the pipeline over a session and write the trajectory CSV
    Track {
        manifest: PathBuf,
        out_csv: Option<PathBuf>,
        /// Calibration file; otherwise the config's, then calibration.json beside the manifest
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Compare a trajectory against ground truth
    Eval {
        trajectory: PathBuf,
        groundtruth: PathBuf,
        out_json: Option<PathBuf>,
        /// Presence flags; otherwise presence.csv beside the ground truth if present
        #[arg(long)]
        presence: Option<PathBuf>,
    },
    /// Derive calibration records from LIDAR and camera co-occurrence
    Calibrate {
        manifest: PathBuf,
        out_json: PathBuf,
        /// Existing calibration whose camera mounts are kept
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Print the effective configuration
    Config {
        /// Ignore --config and print the built-in defaults
        #[arg(long)]
        dump_defaults: bool,
    },
}

fn parse_convention(s: &str) -> Result<AngleConvention, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected `as-printed` or `half-angle`, got `{s}`"))
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure { code, message: message.to_string() }
}

type CmdResult = Result<(), Failure>;

/// Writes to stdout, ignoring a closed pipe (`quadtrack config | head`).
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("quadtrack: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Synth { spec, out_dir } => cmd_synth(cli, spec, out_dir),
        Command::Track { manifest, out_csv, calibration } => {
            cmd_track(cli, manifest, out_csv.as_deref(), calibration.as_deref())
        }
        Command::Eval { trajectory, groundtruth, out_json, presence } => {
            cmd_eval(cli, trajectory, groundtruth, out_json.as_deref(), presence.as_deref())
        }
        Command::Calibrate { manifest, out_json, calibration } => {
            cmd_calibrate(cli, manifest, out_json, calibration.as_deref())
        }
        Command::Config { dump_defaults } => {
            let cfg = if *dump_defaults { PipelineConfig::default() } else { load_config(cli)? };
            emit(&(cfg.to_json_pretty() + "\n"));
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| fail(EXIT_SPEC, format!("config: {e}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(c) = cli.angle_convention {
        cfg.lidar.angle_convention = c;
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(EXIT_OTHER, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| fail(EXIT_OTHER, format!("{}: {e}", path.display())))
}

fn cmd_synth(cli: &Cli, spec_path: &Path, out_dir: &Path) -> CmdResult {
    let text = fs::read_to_string(spec_path).map_err(|e| fail(EXIT_OTHER, format!("{}: {e}", spec_path.display())))?;
    let mut spec: ScenarioSpec =
        serde_json::from_str(&text).map_err(|e| fail(EXIT_SPEC, format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(c) = cli.angle_convention {
        spec.lidar.angle_convention = c;
    }
    let out = gen_session(&spec, out_dir).map_err(|e| match e {
        SynthError::InvalidSpec(_) => fail(EXIT_SPEC, e),
        other => fail(EXIT_OTHER, other),
    })?;
    emit(&format!("wrote {}\n", out.manifest.display()));
    Ok(())
}

/// Calibration path precedence: flag, config, file beside the manifest.
fn calibration_path(flag: Option<&Path>, cfg: &PipelineConfig, manifest: &Path) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| cfg.calibration.clone()).or_else(|| {
        let beside = manifest.parent().unwrap_or(Path::new(".")).join(CALIBRATION);
        beside.exists().then_some(beside)
    })
}

fn load_calibration(path: Option<&Path>) -> Result<CalibrationSet, Failure> {
    match path {
        Some(p) => CalibrationSet::load(p).map_err(|e| fail(EXIT_CALIBRATION, format!("calibration: {e}"))),
        None => Ok(CalibrationSet::default()),
    }
}

fn cmd_track(cli: &Cli, manifest: &Path, out_csv: Option<&Path>, calib_flag: Option<&Path>) -> CmdResult {
    let cfg = load_config(cli)?;
    let out_csv = out_csv
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.trajectory.clone())
        .ok_or_else(|| fail(EXIT_OTHER, "no output path: pass OUT_CSV or set output.trajectory"))?;
    let session = load_session(manifest).map_err(|e| fail(EXIT_OTHER, e))?;
    let calib = load_calibration(calibration_path(calib_flag, &cfg, manifest).as_deref())?;

    let out = run_pipeline(&session, &calib, &cfg, RunOptions { bypass_kf: cli.bypass_kf }).map_err(|e| match e {
        PipelineError::MissingCalibration(_) => fail(EXIT_CALIBRATION, e),
        PipelineError::Config(_) => fail(EXIT_SPEC, e),
        other => fail(EXIT_OTHER, other),
    })?;

    let mut buf = Vec::new();
    write_trajectory(&mut buf, &out.states).map_err(|e| fail(EXIT_OTHER, e))?;
    write_file(&out_csv, &String::from_utf8(buf).expect("trajectory CSV is UTF-8"))?;
    let s = out.stats;
    emit(&format!(
        "{} states over {} ticks (mono {}, thermal {}, idle {}), {} recalibrations\n",
        out.states.len(),
        s.ticks,
        s.mono,
        s.thermal,
        s.idle,
        s.recalibrations
    ));
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    trajectory: &Path,
    groundtruth: &Path,
    out_json: Option<&Path>,
    presence: Option<&Path>,
) -> CmdResult {
    let cfg = load_config(cli)?;
    let out_json = out_json.map(Path::to_path_buf).or_else(|| cfg.output.report.clone());
    let states = read_trajectory(trajectory).map_err(|e| fail(EXIT_OTHER, e))?;
    let gt = read_ground_truth(groundtruth).map_err(|e| fail(EXIT_OTHER, e))?;
    let presence_path = presence.map(Path::to_path_buf).or_else(|| {
        let beside = groundtruth.parent().unwrap_or(Path::new(".")).join("presence.csv");
        beside.exists().then_some(beside)
    });
    let flags = match &presence_path {
        Some(p) => Some(read_presence(p).map_err(|e| fail(EXIT_OTHER, e))?),
        None => None,
    };

    let report = evaluate(&states, &gt, flags.as_deref()).map_err(|e| match e {
        EvalError::NoOverlap => fail(EXIT_EVAL, e),
        other => fail(EXIT_OTHER, other),
    })?;
    emit(&report.to_table("estimate"));

    if let Some(p) = &out_json {
        let json = serde_json::to_string_pretty(&report).map_err(|e| fail(EXIT_OTHER, e))?;
        write_file(p, &(json + "\n"))?;
    }
    if cli.plot {
        let dir = cfg
            .output
            .plot_dir
            .clone()
            .or_else(|| out_json.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        write_plots(&dir, &states, &gt).map_err(|e| fail(EXIT_OTHER, format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn cmd_calibrate(cli: &Cli, manifest: &Path, out_json: &Path, calib_flag: Option<&Path>) -> CmdResult {
    let cfg = load_config(cli)?;
    let session = load_session(manifest).map_err(|e| fail(EXIT_OTHER, e))?;
    let base = load_calibration(calib_flag.or(cfg.calibration.as_deref()))?;
    let records = find_calibrations(&session, &base, &cfg).map_err(|e| match e {
        PipelineError::NoInput => fail(EXIT_NO_COOCCURRENCE, e),
        PipelineError::Config(_) => fail(EXIT_SPEC, e),
        other => fail(EXIT_OTHER, other),
    })?;
    if records.is_empty() {
        return Err(fail(EXIT_NO_COOCCURRENCE, "no frame where a tracked box and a LIDAR target co-occur"));
    }
    let json = serde_json::to_string_pretty(&records).map_err(|e| fail(EXIT_OTHER, e))?;
    write_file(out_json, &(json + "\n"))?;
    for r in &records {
        emit(&format!(
            "{}: D_c {:.1} mm, l_c {:.2} px, L_real {:.1} mm, f {}\n",
            r.mode, r.distance_mm, r.pixel_length, r.real_length_mm, r.f
        ));
    }
    Ok(())
}
