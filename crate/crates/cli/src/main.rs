//! `binpick`: batch front end for the bin-picking perception pipeline.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use binpick_core::error::Error;
use binpick_core::pipeline::{load_config, run_series_with_records, PipelineConfig, TrialContext};
use binpick_core::pose::load_or_generate_templates;
use binpick_core::sim::{generate_pile, render_depth, save_scene, ObjectModel};
use binpick_core::view::{
    build_grid, candidate_poses, filter_feasible, load_grid_json, mark_cells, save_grid_json,
    save_grid_ply, select_pose, DefaultFeasibility, Frustum, MarkParams,
};
use binpick_core::{io, merge, segment};

#[derive(Parser)]
#[command(name = "binpick", version, about = "Iterative bin-picking perception pipeline")]
struct Cli {
    /// Pipeline config JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Detection worker threads (default: BINPICK_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generates a random pile and renders a first capture.
    Simulate,
    /// Selects the best sensor pose (from a marked grid when given).
    PlanView(PlanViewArgs),
    /// Segments a capture and detects object poses.
    Detect(DetectArgs),
    /// Merges previous segments into a current capture.
    Merge(MergeArgs),
    /// Runs the full multi-trial series.
    RunSeries,
    /// Renders the 42 view templates for a model.
    MakeTemplates(MakeTemplatesArgs),
}

#[derive(Args)]
struct PlanViewArgs {
    /// Marked occupancy grid JSON from a previous trial; omit on the first
    /// trial.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Capture to mark a fresh grid from (requires --sensor-pose).
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    sensor_pose: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Capture PLY (world frame).
    #[arg(long)]
    cloud: PathBuf,
    /// Sensor pose JSON the capture was taken from.
    #[arg(long)]
    sensor_pose: PathBuf,
    /// Template cache directory (defaults to <out>/templates).
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Previous trial's full cloud PLY.
    #[arg(long)]
    prev_cloud: PathBuf,
    /// Previous trial's segments JSON (indices into the previous cloud).
    #[arg(long)]
    prev_segments: PathBuf,
    /// Current capture PLY.
    #[arg(long)]
    current: PathBuf,
}

#[derive(Args)]
struct MakeTemplatesArgs {
    /// Object mesh (OBJ or PLY).
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = binpick_core::sim::DEFAULT_MODEL_SAMPLES)]
    samples: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation { .. } | Error::Parse { .. } | Error::Json(_) => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_cli_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Validation {
        field: "config".into(),
        reason: "--config is required for this subcommand".into(),
    })?;
    let mut config = load_config(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    } else if let Ok(value) = std::env::var("BINPICK_THREADS") {
        config.threads = value.parse().map_err(|_| Error::Validation {
            field: "BINPICK_THREADS".into(),
            reason: format!("not a thread count: {value}"),
        })?;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli, config: Option<&PipelineConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.map(|c| PathBuf::from(&c.output_dir)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate => {
            let config = load_cli_config(cli)?;
            let out = out_dir(cli, Some(&config));
            std::fs::create_dir_all(&out)?;
            let model = Arc::new(ObjectModel::from_mesh_file(
                Path::new(&config.model_path),
                config.model_id.clone(),
            )?);
            if cli.verbose {
                eprintln!("placing {} instances (seed {})", config.object_count, config.seed);
            }
            let scene = generate_pile(&model, config.object_count, config.bin, config.seed)?;
            save_scene(&out.join("scene.json"), &scene, &config.model_path)?;
            // render one capture from the first-trial pose
            let frustum = Frustum::from_intrinsics(&config.sensor);
            let cands = candidate_poses(&config.bin, &config.view)?;
            let feasible = filter_feasible(&cands, &DefaultFeasibility::for_box(config.bin))?;
            let selected = select_pose(&feasible, None, &config.bin, &frustum)?;
            let cloud = render_depth(&scene, &selected.pose, &config.sensor, config.seed);
            io::write_ply_cloud(&out.join("cloud.ply"), &cloud, None)?;
            std::fs::write(
                out.join("sensor_pose.json"),
                serde_json::to_string_pretty(&selected.pose)?,
            )?;
            if cli.verbose {
                eprintln!("wrote scene.json, cloud.ply ({} points), sensor_pose.json", cloud.len());
            }
            Ok(())
        }
        Command::PlanView(args) => {
            let config = load_cli_config(cli)?;
            let out = out_dir(cli, Some(&config));
            std::fs::create_dir_all(&out)?;
            let frustum = Frustum::from_intrinsics(&config.sensor);
            let cands = candidate_poses(&config.bin, &config.view)?;
            let feasible = filter_feasible(&cands, &DefaultFeasibility::for_box(config.bin))?;
            let grid = match (&args.grid, &args.cloud) {
                (Some(path), _) => Some(load_grid_json(path)?),
                (None, Some(cloud_path)) => {
                    let pose_path = args.sensor_pose.as_ref().ok_or_else(|| Error::Validation {
                        field: "sensor_pose".into(),
                        reason: "--cloud needs --sensor-pose".into(),
                    })?;
                    let cloud = io::read_ply_cloud(cloud_path)?;
                    let pose = serde_json::from_str(&std::fs::read_to_string(pose_path)?)?;
                    let model = ObjectModel::from_mesh_file(
                        Path::new(&config.model_path),
                        config.model_id.clone(),
                    )?;
                    let height =
                        (config.bin.max.z - config.bin.min.z) + 2.0 * model.max_extent();
                    let fresh = build_grid(&config.bin, config.view.cell_size, height)?;
                    let params = MarkParams {
                        min_points_per_cell: config.view.min_points_per_cell,
                        frustum,
                    };
                    let marked = mark_cells(&fresh, &cloud, &pose, &params)?;
                    save_grid_json(&out.join("grid.json"), &marked)?;
                    save_grid_ply(&out.join("grid.ply"), &marked)?;
                    Some(marked)
                }
                (None, None) => None,
            };
            let selected = select_pose(&feasible, grid.as_ref(), &config.bin, &frustum)?;
            if cli.verbose {
                eprintln!(
                    "selected face {} distance {}",
                    selected.face_index, selected.distance_index
                );
            }
            std::fs::write(
                out.join("selected_pose.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "pose": selected.pose,
                    "face_index": selected.face_index,
                    "distance_index": selected.distance_index,
                }))?,
            )?;
            Ok(())
        }
        Command::Detect(args) => {
            let config = load_cli_config(cli)?;
            let out = out_dir(cli, Some(&config));
            std::fs::create_dir_all(&out)?;
            let model = ObjectModel::from_mesh_file(
                Path::new(&config.model_path),
                config.model_id.clone(),
            )?;
            let template_dir = args
                .templates
                .clone()
                .unwrap_or_else(|| out.join("templates"));
            let templates = load_or_generate_templates(&template_dir, &model)?;
            let cloud = io::read_ply_cloud(&args.cloud)?;
            let sensor_pose =
                serde_json::from_str(&std::fs::read_to_string(&args.sensor_pose)?)?;
            let ctx = TrialContext {
                model: &model,
                templates: &templates,
                sensor_pose,
                detect: config.detect_params(),
                cluster: config.cluster,
                gate_tolerance: config.gate_tolerance,
                downsample_cell: config.downsample_cell,
                plane_tol: config.plane_tol,
                plane_min_fraction: config.plane_min_fraction,
                crop_margin: config.crop_margin,
                bin: config.bin,
                threads: config.threads,
            };
            let outcome = binpick_core::pipeline::iterate_trial(None, &cloud, &config.merge, &ctx)?;
            segment::save_segments_json(&out.join("segments.json"), &outcome.state.segments)?;
            std::fs::write(
                out.join("estimates.json"),
                serde_json::to_string_pretty(&outcome.state.estimates)?,
            )?;
            if cli.verbose {
                eprintln!(
                    "{} segments, {} estimates",
                    outcome.state.segments.len(),
                    outcome.state.estimates.len()
                );
            }
            Ok(())
        }
        Command::Merge(args) => {
            let config = load_cli_config(cli)?;
            let out = out_dir(cli, Some(&config));
            std::fs::create_dir_all(&out)?;
            let prev = Arc::new(io::read_ply_cloud(&args.prev_cloud)?);
            let prev_segments = segment::load_segments_json(&args.prev_segments, &prev)?;
            let current = io::read_ply_cloud(&args.current)?;
            let (merged, report) = merge::merge_clouds(&prev_segments, &current, &config.merge)?;
            let origins: Vec<u8> = merged
                .origins
                .iter()
                .map(|o| match o {
                    merge::PointOrigin::Current => 0u8,
                    merge::PointOrigin::Carried => 1u8,
                })
                .collect();
            io::write_ply_cloud(&out.join("merged.ply"), &merged.cloud, Some(&origins))?;
            std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
            if cli.verbose {
                eprintln!(
                    "merged {} of {} segments ({} points)",
                    report.merged_segment_ids.len(),
                    report.per_segment.len(),
                    report.merged_cloud_size
                );
            }
            Ok(())
        }
        Command::RunSeries => {
            let config = load_cli_config(cli)?;
            let out = out_dir(cli, Some(&config));
            if cli.verbose {
                eprintln!(
                    "running {} trials over {} objects (seed {})",
                    config.trial_count, config.object_count, config.seed
                );
            }
            let (metrics, _) = run_series_with_records(&config, &out)?;
            if cli.verbose {
                for t in &metrics.per_trial {
                    eprintln!(
                        "trial {}: {} segments, {} re-detected, {} reused",
                        t.trial, t.gated_segments, t.redetect_count, t.reused_count
                    );
                }
            }
            println!(
                "{} trials, {} detection calls ({} naive), metrics in {}",
                metrics.trial_count,
                metrics.cumulative_detection_calls,
                metrics.naive_baseline_calls,
                out.join("metrics.json").display()
            );
            Ok(())
        }
        Command::MakeTemplates(args) => {
            let out = out_dir(cli, None);
            let model = ObjectModel::from_mesh(
                io::load_mesh(&args.model)?,
                args.model
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into()),
                args.samples,
            )?;
            let templates = load_or_generate_templates(&out, &model)?;
            println!("{} templates in {}", templates.len(), out.display());
            Ok(())
        }
    }
}
