use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use lightcurtain::curtain::{design_safety_curtain, planar_curtain, PlcModel};
use lightcurtain::geom2d::Point2;
use lightcurtain::instrument::{
    brute_force_search, coverage_percentage, sample_search, score_configuration, ScoreOptions,
    DEFAULT_BRUTE_FORCE_BUDGET,
};
use lightcurtain::io::{layout_svg, profile_csv, save_pgm, save_ply};
use lightcurtain::layout::{load_scenario, Scenario};
use lightcurtain::monitor::{latency_report, robot_points, run_pipeline, MonitorMode, PipelineConfig};
use lightcurtain::plcsim::InterferenceModel;
use lightcurtain::recon::{reconstruct_scene, IcpParams, PointCloud};
use lightcurtain::Error;

#[derive(Parser)]
#[command(name = "lightcurtain", version, about = "Programmable light curtain placement, monitoring and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search PLC poses that maximize robot coverage.
    Instrument(InstrumentArgs),
    /// Run the intrusion-monitoring pipeline on a simulated clock.
    Simulate(SimulateArgs),
    /// Sweep planar curtains and rebuild the scene as point clouds.
    Reconstruct(ReconstructArgs),
    /// Validate a scenario and summarize it.
    Report(ReportArgs),
}

#[derive(Args, serde::Serialize)]
struct InstrumentArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Number of PLCs to place; defaults to the scenario's plc_count.
    #[arg(long)]
    plcs: Option<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, required_unless_present = "brute_force")]
    seed: Option<u64>,
    #[arg(long)]
    occlusion: bool,
    /// Horizontal field of view in degrees; defaults to the scenario's sensor.
    #[arg(long)]
    fov_deg: Option<f64>,
    /// Enumerate the whole grid instead of sampling.
    #[arg(long)]
    brute_force: bool,
    #[arg(long, default_value_t = DEFAULT_BRUTE_FORCE_BUDGET)]
    budget: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Planar,
    Dynamic,
}

#[derive(Args, serde::Serialize)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "planar")]
    mode: ModeArg,
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    seed: u64,
    /// Consecutive detection frames required before a stop.
    #[arg(long, default_value_t = 1)]
    persistence: usize,
    /// Per-frame chance of an interference burst (0 disables interference).
    #[arg(long, default_value_t = 0.0)]
    interference: f64,
    /// Also write the first frame's curtain profile of each PLC as CSV.
    #[arg(long)]
    curtains: bool,
    /// Timeline file (`*.json`) or output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct ReconstructArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    sweep_interval: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct ReportArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::BudgetExceeded { .. } => 3,
            Error::InsufficientPoints(_) => 4,
            Error::Io(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Instrument(a) => cmd_instrument(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
    std::fs::write(path, text)
}

/// Inputs and a hash of the full configuration; nothing time-dependent.
fn write_run_meta(dir: &Path, command: &str, scenario: &Path, args: &impl serde::Serialize, seed: Option<u64>) -> CmdResult {
    let config = serde_json::to_value(args).expect("serializable");
    let scenario_bytes = std::fs::read(scenario)?;
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(serde_json::to_string(&config).expect("serializable").as_bytes());
    h.update(&scenario_bytes);
    let meta = json!({
        "command": command,
        "scenario": scenario.display().to_string(),
        "scenario_sha256": hex(&Sha256::digest(&scenario_bytes)),
        "seed": seed,
        "config": config,
        "config_hash": hex(&h.finalize()),
    });
    write_json(&dir.join("run_meta.json"), &meta)?;
    Ok(())
}

fn write_timing(dir: &Path, started: Instant) -> CmdResult {
    write_json(
        &dir.join("timing.json"),
        &json!({ "wall_time_s": started.elapsed().as_secs_f64() }),
    )?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).map_err(Failure::from)
}

fn cmd_instrument(a: &InstrumentArgs) -> CmdResult {
    let started = Instant::now();
    let sc = load(&a.scenario)?;
    let m = a.plcs.unwrap_or(sc.plc_count);
    let mut opts = ScoreOptions::from_scenario(&sc);
    opts.occlusion = a.occlusion;
    if let Some(d) = a.fov_deg {
        if !(d > 0.0 && d <= 180.0) {
            return Err(Error::InvalidArgument(format!("--fov-deg must be in (0, 180], got {d}")).into());
        }
        opts.fov = d.to_radians();
    }
    let best = if a.brute_force {
        brute_force_search(&sc, m, &opts, a.budget)?
    } else {
        sample_search(&sc, m, a.samples, a.seed.expect("clap enforces seed"), &opts)?
    };
    std::fs::create_dir_all(&a.out)?;
    let coverage = coverage_percentage(&best.score, &sc);
    let report = json!({
        "scenario": sc.name,
        "method": if a.brute_force { "brute_force" } else { "sample" },
        "plcs": m,
        "samples_evaluated": best.samples_evaluated,
        "seed": a.seed,
        "fov_rad": opts.fov,
        "occlusion": opts.occlusion,
        "poses": best.poses,
        "pose_indices": best.pose_indices,
        "angle_sum": best.score.angle_sum,
        "observed_vertices": best.score.observed_vertices.len(),
        "total_vertices": 4 * sc.robots.len(),
        "coverage_percent": coverage,
        "fully_covered_robots": best.score.full_coverage_bonus_count,
        "counted_edges": best.score.counted_edges,
    });
    write_json(&a.out.join("placement.json"), &report)?;
    std::fs::write(a.out.join("layout.svg"), layout_svg(&sc, &best.poses, Some(&best.score)))?;
    write_run_meta(&a.out, "instrument", &a.scenario, a, a.seed)?;
    write_timing(&a.out, started)?;
    println!(
        "coverage {:.1}% ({}/{} corners), angle sum {:.4}",
        coverage,
        best.score.observed_vertices.len(),
        4 * sc.robots.len(),
        best.score.angle_sum
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let started = Instant::now();
    let sc = load(&a.scenario)?;
    let (dir, timeline_path) = if a.out.extension().is_some_and(|e| e == "json") {
        let dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, a.out.clone())
    } else {
        (a.out.clone(), a.out.join("timeline.json"))
    };
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    let cfg = PipelineConfig {
        mode: match a.mode {
            ModeArg::Planar => MonitorMode::Planar,
            ModeArg::Dynamic => MonitorMode::Dynamic,
        },
        persistence: a.persistence,
        seed: a.seed,
        interference: (a.interference > 0.0).then_some(InterferenceModel {
            burst_probability: a.interference,
            min_burst_frames: 2,
            max_burst_frames: 4,
            burst_columns: (sc.sensor.n_cols / 16).max(1),
            seed: a.seed,
        }),
        ..Default::default()
    };
    let timeline = run_pipeline(&sc, a.duration, &cfg)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&timeline_path, timeline.to_json_string() + "\n")?;
    let latency: Value = match latency_report(&timeline) {
        Ok(r) => serde_json::to_value(r).expect("serializable"),
        Err(_) => json!({ "episodes": 0 }),
    };
    write_json(&dir.join("latency.json"), &latency)?;
    if a.curtains {
        let poses = sc.require_plc_poses()?;
        for (i, &pose) in poses.iter().enumerate() {
            let mut s = sc.sensor.clone();
            if cfg.mode == MonitorMode::Dynamic {
                s.frame_rate_hz = s.dynamic_rate_hz;
            }
            let plc = PlcModel::from_params(pose, &s)?;
            let profile = match cfg.mode {
                MonitorMode::Planar => planar_curtain(s.planar_depth_m, &plc)?,
                MonitorMode::Dynamic => {
                    let mut ranges = vec![plc.max_range; plc.n_cols];
                    for r in 0..sc.robots.len() {
                        let local: Vec<Point2> = robot_points(&sc, r, 0.0)?
                            .iter()
                            .map(|p| pose.to_local(Point2::new(p.x, p.y)))
                            .collect();
                        let c = design_safety_curtain(&local, &plc, s.safety_offset_m)?;
                        for (a, b) in ranges.iter_mut().zip(&c.profile.ranges) {
                            *a = a.min(*b);
                        }
                    }
                    lightcurtain::curtain::CurtainProfile {
                        ranges,
                        kind: lightcurtain::curtain::CurtainKind::Safety,
                        stamp: 0,
                    }
                }
            };
            std::fs::write(dir.join(format!("curtain_plc{i}.csv")), profile_csv(&profile))?;
        }
    }
    write_run_meta(&dir, "simulate", &a.scenario, a, Some(a.seed))?;
    write_timing(&dir, started)?;
    println!(
        "{} events, {} detections, {} stops",
        timeline.events.len(),
        timeline.count(lightcurtain::monitor::EventKind::Detection),
        timeline.count(lightcurtain::monitor::EventKind::StopIssued)
    );
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> CmdResult {
    let started = Instant::now();
    let sc = load(&a.scenario)?;
    if !(a.sweep_interval > 0.0) {
        return Err(Error::InvalidArgument("--sweep-interval must be > 0".into()).into());
    }
    std::fs::create_dir_all(&a.out)?;
    let params = IcpParams::default();
    let n_plcs = sc.require_plc_poses()?.len();
    let single = n_plcs < 2;
    // an empty scene has nothing to register
    let rec = match reconstruct_scene(&sc, a.sweep_interval, &params) {
        Err(Error::InsufficientPoints(msg)) => {
            let probe = reconstruct_scene(&sc, a.sweep_interval, &IcpParams { min_points: 0, ..params });
            match probe {
                Ok(r) if r.clouds.iter().all(PointCloud::is_empty) => r,
                _ => return Err(Error::InsufficientPoints(msg).into()),
            }
        }
        other => other?,
    };
    for (i, (cloud, merged)) in rec.clouds.iter().zip(&rec.merged).enumerate() {
        save_ply(a.out.join(format!("plc{i}.ply")), cloud)?;
        save_pgm(a.out.join(format!("plc{i}_merged.pgm")), merged.width, merged.height, &merged.intensity)?;
    }
    if rec.combined.is_empty() {
        eprintln!("warning: the scene produced no returns; writing an empty cloud");
    }
    save_ply(a.out.join("combined.ply"), &rec.combined)?;
    let empty = rec.clouds.iter().all(PointCloud::is_empty);
    let report = json!({
        "scenario": sc.name,
        "sweep_interval_m": a.sweep_interval,
        "points_per_plc": rec.clouds.iter().map(PointCloud::len).collect::<Vec<_>>(),
        "registered": !single && !empty,
        "registrations": if empty { Value::Array(vec![]) } else { serde_json::to_value(&rec.registrations).expect("serializable") },
    });
    write_json(&a.out.join("icp.json"), &report)?;
    write_run_meta(&a.out, "reconstruct", &a.scenario, a, Some(a.seed))?;
    write_timing(&a.out, started)?;
    println!("{} points in the combined cloud", rec.combined.len());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    let sc = load(&a.scenario)?;
    let mut report = json!({
        "scenario": sc.name,
        "workspace_m": [sc.workspace.width(), sc.workspace.height()],
        "robots": sc.robots.len(),
        "plc_count": sc.plc_count,
        "grid_poses": sc.grid.len(),
        "arms": sc.arms.len(),
        "obstacles": sc.obstacles.len(),
    });
    if let Some(poses) = &sc.plc_poses {
        let score = score_configuration(&sc, poses, &ScoreOptions::from_scenario(&sc));
        report["fixed_pose_coverage_percent"] = json!(coverage_percentage(&score, &sc));
        report["fixed_pose_angle_sum"] = json!(score.angle_sum);
    }
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    println!("{text}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), text + "\n")?;
        write_run_meta(dir, "report", &a.scenario, a, None)?;
    }
    Ok(())
}
