//! End-to-end trial series: scene generation, per-trial view planning,
//! capture, merging, detection, and pick simulation, with file artifacts and
//! a deterministic metrics summary.
//!
//! `trial_count` is the total number of capture-and-detect passes; after
//! every pass except the last, the best-detected object is picked and
//! removed. Three picks plus a final capture is `trial_count = 4`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{voxel_downsample, Aabb, PointCloud, RigidTransform};
use crate::io;
use crate::merge::{
    decide_reuse, merge_clouds, MergeParams, MergeReport, MergedCloud, PointOrigin, SegmentAction,
};
use crate::pose::{
    detect_all_multi, load_or_generate_templates, DetectParams, IcpParams, PoseEstimate,
    Provenance, ViewTemplate,
};
use crate::segment::{
    euclidean_cluster_subset, gate_by_bounding_box, remove_plane, save_segments_json,
    ClusterParams, Segment,
};
use crate::sim::{
    apply_pick, generate_pile, render_depth_labeled, save_scene, ObjectModel, PickDisturbance, SensorIntrinsics,
};
use crate::view::{
    build_grid, candidate_poses, filter_feasible, mark_cells, save_grid_json, save_grid_ply,
    select_pose, DefaultFeasibility, Frustum, MarkParams, OccupancyGrid, SensorPoseCandidate,
    ViewPlanParams,
};
use crate::Result;

fn default_model_id() -> String {
    "model".to_string()
}
fn default_trial_count() -> usize {
    4
}
fn default_gate_tolerance() -> f64 {
    0.3
}
fn default_downsample_cell() -> f64 {
    0.004
}
fn default_plane_tol() -> f64 {
    0.004
}
fn default_plane_min_fraction() -> f64 {
    0.2
}
fn default_model_samples() -> usize {
    crate::sim::DEFAULT_MODEL_SAMPLES
}
fn default_crop_margin() -> f64 {
    0.005
}
fn default_symmetries() -> Vec<[f64; 4]> {
    vec![[1.0, 0.0, 0.0, 0.0]]
}
fn default_output_dir() -> String {
    "out".to_string()
}

/// Everything a series run needs; every numeric default of the underlying
/// stages is surfaced here and overridable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Mesh file (OBJ or PLY); relative paths resolve against the config
    /// file's directory when loaded with [`load_config`].
    pub model_path: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Storage box interior, world frame.
    #[serde(rename = "box")]
    pub bin: Aabb,
    pub object_count: usize,
    /// Total capture-and-detect passes; a pick follows each but the last.
    #[serde(default = "default_trial_count")]
    pub trial_count: usize,
    pub seed: u64,
    /// Skip the pick entirely (the pile never changes).
    #[serde(default)]
    pub disable_pick: bool,
    #[serde(default)]
    pub view: ViewPlanParams,
    #[serde(default)]
    pub cluster: ClusterParams,
    #[serde(default)]
    pub icp: IcpParams,
    #[serde(default)]
    pub merge: MergeParams,
    #[serde(default)]
    pub sensor: SensorIntrinsics,
    #[serde(default)]
    pub disturbance: PickDisturbance,
    #[serde(default = "default_gate_tolerance")]
    pub gate_tolerance: f64,
    #[serde(default = "default_downsample_cell")]
    pub downsample_cell: f64,
    #[serde(default = "default_plane_tol")]
    pub plane_tol: f64,
    #[serde(default = "default_plane_min_fraction")]
    pub plane_min_fraction: f64,
    /// Captures crop to the box footprint inset by this margin, dropping
    /// wall returns before segmentation.
    #[serde(default = "default_crop_margin")]
    pub crop_margin: f64,
    #[serde(default = "default_coarse_k")]
    pub coarse_k: usize,
    #[serde(default = "default_accept_min_fitness")]
    pub accept_min_fitness: f64,
    /// Worker threads for detection; 0 uses the global pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_model_samples")]
    pub model_samples: usize,
    /// Model symmetry rotations (unit quaternions, w x y z) for pose-error
    /// metrics; identity only unless the object is symmetric.
    #[serde(default = "default_symmetries")]
    pub symmetry_rotations: Vec<[f64; 4]>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_coarse_k() -> usize {
    5
}
fn default_accept_min_fitness() -> f64 {
    0.5
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !Path::new(&self.model_path).exists() {
            return Err(Error::validation(
                "model_path",
                format!("file not found: {}", self.model_path),
            ));
        }
        if self.object_count == 0 {
            return Err(Error::validation("object_count", "must be at least 1"));
        }
        if self.trial_count == 0 {
            return Err(Error::validation("trial_count", "must be at least 1"));
        }
        let e = self.bin.extents();
        if e.iter().any(|&x| x <= 0.0) {
            return Err(Error::validation("box", "must have positive extents"));
        }
        self.view.validate()?;
        self.cluster.validate()?;
        self.icp.validate()?;
        self.merge.validate()?;
        self.sensor.validate()?;
        self.disturbance.validate()?;
        for (name, v) in [
            ("gate_tolerance", self.gate_tolerance),
            ("downsample_cell", self.downsample_cell),
            ("plane_tol", self.plane_tol),
        ] {

            if v <= 0.0 || !v.is_finite() {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.plane_min_fraction) {
            return Err(Error::validation("plane_min_fraction", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.accept_min_fitness) {
            return Err(Error::validation("accept_min_fitness", "must be in [0, 1]"));
        }
        if self.coarse_k == 0 {
            return Err(Error::validation("coarse_k", "must be at least 1"));
        }
        if self.model_samples < 500 {
            return Err(Error::validation("model_samples", "need at least 500"));
        }
        for q in &self.symmetry_rotations {
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(
                    "symmetry_rotations",
                    "quaternions must be unit length",
                ));
            }
        }
        Ok(())
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            icp: self.icp,
            coarse_k: self.coarse_k,
            accept_min_fitness: self.accept_min_fitness,
        }
    }

    fn symmetry_quaternions(&self) -> Vec<UnitQuaternion<f64>> {
        self.symmetry_rotations
            .iter()
            .map(|q| UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])))
            .collect()
    }
}

/// Loads a config JSON, resolving a relative model path against the config's
/// directory.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config: PipelineConfig = serde_json::from_str(&text)?;
    let model = Path::new(&config.model_path);
    if model.is_relative() {
        if let Some(dir) = path.parent() {
            config.model_path = dir.join(model).display().to_string();
        }
    }
    Ok(config)
}

/// State carried between trials: the full previous cloud (plane included),
/// its gated segments, and the pose estimates.
#[derive(Debug, Clone)]
pub struct TrialState {
    pub cloud: Arc<PointCloud>,
    pub segments: Vec<Segment>,
    pub estimates: Vec<PoseEstimate>,
}

/// Dependencies a single trial iteration needs.
pub struct TrialContext<'a> {
    pub model: &'a ObjectModel,
    pub templates: &'a [ViewTemplate],
    pub sensor_pose: RigidTransform,
    pub detect: DetectParams,
    pub cluster: ClusterParams,
    pub gate_tolerance: f64,
    pub downsample_cell: f64,
    pub plane_tol: f64,
    pub plane_min_fraction: f64,
    /// Wall inset: capture points outside the box footprint shrunk by this
    /// margin are discarded (wall returns, outside clutter).
    pub crop_margin: f64,
    pub bin: Aabb,
    pub threads: usize,
}

/// Result of one capture-and-detect pass.
pub struct TrialOutcome {
    pub state: TrialState,
    pub merge_report: Option<MergeReport>,
    /// The merged cloud with per-point origins, for later trials.
    pub merged: Option<MergedCloud>,
    /// Segments detection actually ran on this trial.
    pub redetect_count: usize,
    pub reused_count: usize,
}

/// Runs one trial. Without previous state this is the first-trial path
/// (plane removal, clustering, gating, full detection); with it, the
/// previous segments merge into the current capture first and segments still
/// explained by a previous estimate skip re-detection.
pub fn iterate_trial(
    prev: Option<&TrialState>,
    current_raw: &PointCloud,
    params: &MergeParams,
    ctx: &TrialContext,
) -> Result<TrialOutcome> {
    let current = voxel_downsample(current_raw, ctx.downsample_cell)?;
    // keep only the storage area: walls and outside returns never belong to
    // a pickable segment
    let m = ctx.crop_margin;
    let keep: Vec<usize> = current
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.x >= ctx.bin.min.x + m
                && p.x <= ctx.bin.max.x - m
                && p.y >= ctx.bin.min.y + m
                && p.y <= ctx.bin.max.y - m
                && p.z >= ctx.bin.min.z - 1e-9
        })
        .map(|(i, _)| i)
        .collect();
    let current = current.select(&keep);

    let (full, merge_report, merged) = match prev {
        None => (Arc::new(current), None, None),
        Some(state) => {
            let (merged, report) = merge_clouds(&state.segments, &current, params)?;
            (Arc::new(merged.cloud.clone()), Some(report), Some(merged))
        }
    };

    let removal = remove_plane(&full, ctx.plane_tol, ctx.plane_min_fraction)?;
    let clusters = euclidean_cluster_subset(&full, &removal.kept_indices, &ctx.cluster)?;
    let model_extents = ctx.model.aabb().extents();
    let gated = gate_by_bounding_box(clusters, model_extents, ctx.gate_tolerance);

    let (estimates, redetect_count, reused_count) = match prev {
        None => {
            let detections = detect_all_multi(
                &gated,
                ctx.templates,
                ctx.model,
                &ctx.sensor_pose,
                &ctx.detect,
                ctx.cluster.min_size,
                ctx.threads,
            );
            let estimates: Vec<PoseEstimate> =
                detections.into_iter().flat_map(|(_, e)| e).collect();
            let redetect = gated.len();
            (estimates, redetect, 0)
        }
        Some(state) => {
            let decisions = decide_reuse(&gated, &state.estimates, ctx.model, params)?;
            let redetect_segments: Vec<Segment> = gated
                .iter()
                .zip(&decisions)
                .filter(|(_, d)| !d.is_reuse())
                .map(|(s, _)| s.clone())
                .collect();
            let fresh = detect_all_multi(
                &redetect_segments,
                ctx.templates,
                ctx.model,
                &ctx.sensor_pose,
                &ctx.detect,
                ctx.cluster.min_size,
                ctx.threads,
            );
            let mut fresh_iter = fresh.into_iter();
            let mut estimates = Vec::new();
            let mut reused = 0usize;
            for decision in &decisions {
                match &decision.action {
                    SegmentAction::Reuse(e) => {
                        estimates.push(e.clone());
                        reused += 1;
                    }
                    SegmentAction::Redetect => {
                        if let Some((_, found)) = fresh_iter.next() {
                            estimates.extend(found);
                        }
                    }
                }
            }
            let redetect = redetect_segments.len();
            (estimates, redetect, reused)
        }
    };

    Ok(TrialOutcome {
        state: TrialState {
            cloud: full,
            segments: gated,
            estimates,
        },
        merge_report,
        merged,
        redetect_count,
        reused_count,
    })
}

/// Ground-truth and outcome record for one capture pass.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub sensor_pose: RigidTransform,
    pub face_index: usize,
    pub distance_index: usize,
    pub capture_points: usize,
    pub gated_segments: usize,
    pub redetect_count: usize,
    pub reused_count: usize,
    pub estimates: Vec<PoseEstimate>,
    #[serde(skip)]
    pub merge_report: Option<MergeReport>,
    pub picked_instance: Option<usize>,
    /// Ground-truth instance poses before any pick that follows this pass.
    pub ground_truth: Vec<(usize, RigidTransform)>,
    /// Points each instance contributed to this capture.
    pub visible_instances: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub gated_segments: usize,
    pub redetect_count: usize,
    pub reused_count: usize,
    pub estimate_count: usize,
    pub evaluated: usize,
    pub mean_rotation_error_deg: Option<f64>,
    pub max_rotation_error_deg: Option<f64>,
    pub mean_translation_error_m: Option<f64>,
    pub max_translation_error_m: Option<f64>,
    pub picked_instance: Option<usize>,
}

/// Deterministic series summary; wall-clock timings live in a separate file
/// so this JSON is byte-identical across runs of the same config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesMetrics {
    pub trial_count: usize,
    pub halted: bool,
    pub per_trial: Vec<TrialMetrics>,
    pub cumulative_detection_calls: usize,
    /// Detection calls a re-detect-everything baseline would make.
    pub naive_baseline_calls: usize,
    pub reused_total: usize,
    pub false_reuse_count: usize,
    pub false_reuse_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
struct StageTimings {
    trial: usize,
    plan_s: f64,
    render_s: f64,
    iterate_s: f64,
    mark_s: f64,
}

fn pose_motion(a: &RigidTransform, b: &RigidTransform, radius: f64) -> f64 {
    a.translation_distance_to(b) + 2.0 * (a.rotation_angle_to(b) / 2.0).sin() * radius
}

/// Matches an estimate to the closest ground-truth instance by translation.
fn nearest_instance(tr: &RigidTransform, truth: &[(usize, RigidTransform)]) -> Option<(usize, f64)> {
    truth
        .iter()
        .map(|(id, gt)| (*id, tr.translation_distance_to(gt)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}

fn rotation_error_mod_symmetry(
    estimate: &RigidTransform,
    truth: &RigidTransform,
    symmetries: &[UnitQuaternion<f64>],
) -> f64 {
    symmetries
        .iter()
        .map(|s| {
            let equivalent = truth.rotation() * *s;
            estimate.rotation().angle_to(&equivalent)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs the whole series and writes artifacts under `out`:
/// `trial_k/{cloud.ply, merged.ply, grid.json, grid.ply, estimates.json,
/// report.json, segments.json, scene.json}` plus `metrics.json` and
/// `timings.json`. Returns the metrics and the in-memory records.
pub fn run_series_with_records(
    config: &PipelineConfig,
    out: &Path,
) -> Result<(SeriesMetrics, Vec<TrialRecord>)> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let model = Arc::new(
        ObjectModel::from_mesh_file(Path::new(&config.model_path), config.model_id.clone())?,
    );
    let templates = load_or_generate_templates(&out.join("templates"), &model)?;
    let symmetries = config.symmetry_quaternions();
    let model_radius = model.max_extent() / 2.0;

    let mut scene = generate_pile(&model, config.object_count, config.bin, config.seed)?;
    let grid_height = (config.bin.max.z - config.bin.min.z) + 2.0 * model.max_extent();
    let frustum = Frustum::from_intrinsics(&config.sensor);
    let candidates = candidate_poses(&config.bin, &config.view)?;
    let feasible = filter_feasible(&candidates, &DefaultFeasibility::for_box(config.bin))?;
    let mark_params = MarkParams {
        min_points_per_cell: config.view.min_points_per_cell,
        frustum,
    };

    let mut prev_state: Option<TrialState> = None;
    let mut prev_grid: Option<OccupancyGrid> = None;
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut timings: Vec<StageTimings> = Vec::new();
    let mut halted = false;

    for trial in 1..=config.trial_count {
        let trial_dir = out.join(format!("trial_{trial}"));
        std::fs::create_dir_all(&trial_dir)?;

        let t0 = Instant::now();
        let selected: SensorPoseCandidate = match &prev_grid {
            None => select_pose(&feasible, None, &config.bin, &frustum)?,
            Some(grid) => match select_pose(&feasible, Some(grid), &config.bin, &frustum) {
                Ok(c) => c,
                // an empty previous capture leaves the grid unmarked
                Err(Error::GridUnmarked) => select_pose(&feasible, None, &config.bin, &frustum)?,
                Err(e) => return Err(e),
            },
        };
        let plan_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let render_seed = config.seed.wrapping_mul(1000).wrapping_add(trial as u64);
        let capture =
            render_depth_labeled(&scene, &selected.pose, &config.sensor, render_seed);
        let render_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let ctx = TrialContext {
            model: &model,
            templates: &templates,
            sensor_pose: selected.pose,
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
        let outcome = iterate_trial(prev_state.as_ref(), &capture.cloud, &config.merge, &ctx)?;
        let iterate_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let grid = build_grid(&config.bin, config.view.cell_size, grid_height)?;
        let marked = mark_cells(&grid, &capture.cloud, &selected.pose, &mark_params)?;
        let mark_s = t0.elapsed().as_secs_f64();

        // artifacts
        io::write_ply_cloud(&trial_dir.join("cloud.ply"), &capture.cloud, None)?;
        if let Some(merged) = &outcome.merged {
            let origins: Vec<u8> = merged
                .origins
                .iter()
                .map(|o| match o {
                    PointOrigin::Current => 0u8,
                    PointOrigin::Carried => 1u8,
                })
                .collect();
            io::write_ply_cloud(&trial_dir.join("merged.ply"), &merged.cloud, Some(&origins))?;
        }
        save_grid_json(&trial_dir.join("grid.json"), &marked)?;
        save_grid_ply(&trial_dir.join("grid.ply"), &marked)?;
        save_segments_json(&trial_dir.join("segments.json"), &outcome.state.segments)?;
        std::fs::write(
            trial_dir.join("estimates.json"),
            serde_json::to_string_pretty(&outcome.state.estimates)?,
        )?;
        save_scene(&trial_dir.join("scene.json"), &scene, &config.model_path)?;

        let ground_truth: Vec<(usize, RigidTransform)> = scene
            .instances()
            .iter()
            .map(|i| (i.id, i.pose))
            .collect();
        let visible_instances: Vec<(usize, usize)> = scene
            .instances()
            .iter()
            .map(|inst| {
                let count = capture
                    .labels
                    .iter()
                    .filter(|&&l| l == inst.id as i64)
                    .count();
                (inst.id, count)
            })
            .collect();
        let mut record = TrialRecord {
            trial,
            sensor_pose: selected.pose,
            face_index: selected.face_index,
            distance_index: selected.distance_index,
            capture_points: capture.cloud.len(),
            gated_segments: outcome.state.segments.len(),
            redetect_count: outcome.redetect_count,
            reused_count: outcome.reused_count,
            estimates: outcome.state.estimates.clone(),
            merge_report: outcome.merge_report.clone(),
            picked_instance: None,
            ground_truth,
            visible_instances,
        };
        if let Some(report) = &outcome.merge_report {
            std::fs::write(
                trial_dir.join("report.json"),
                serde_json::to_string_pretty(report)?,
            )?;
        }
        timings.push(StageTimings {
            trial,
            plan_s,
            render_s,
            iterate_s,
            mark_s,
        });

        let last = trial == config.trial_count;
        if outcome.state.estimates.is_empty() && !last {
            // nothing detected: record the failure and stop gracefully
            halted = true;
            std::fs::write(trial_dir.join("report.json"), "{\"halted\": true}")?;
            records.push(record);
            break;
        }

        if !last && !config.disable_pick {
            // pick the best-detected object: highest fitness, ties to the
            // smaller matched instance id
            let mut ranked: Vec<(usize, usize)> = record
                .estimates
                .iter()
                .filter_map(|e| {
                    nearest_instance(&e.pose, &record.ground_truth)
                        .map(|(id, _)| (e.fitness, id))
                })
                .collect();
            ranked.sort_by_key(|(fitness, id)| (std::cmp::Reverse(*fitness), *id));
            if let Some(&(_, target)) = ranked.iter().find(|(_, id)| scene.instance(*id).is_some())
            {
                let pick_seed = config.seed.wrapping_mul(7919).wrapping_add(trial as u64);
                scene = apply_pick(&scene, target, &config.disturbance, pick_seed)?;
                record.picked_instance = Some(target);
            }
        }
        std::fs::write(
            trial_dir.join("record.json"),
            serde_json::to_string_pretty(&record)?,
        )?;
        records.push(record);
        prev_state = Some(outcome.state);
        prev_grid = Some(marked);
    }

    // metrics
    let mut per_trial = Vec::new();
    let mut false_reuse = 0usize;
    let mut reused_total = 0usize;
    for (k, record) in records.iter().enumerate() {
        let mut rot_errors = Vec::new();
        let mut trans_errors = Vec::new();
        for estimate in &record.estimates {
            let Some((id, trans_err)) = nearest_instance(&estimate.pose, &record.ground_truth)
            else {
                continue;
            };
            if trans_err > model.max_extent() {
                continue;
            }
            let gt = record
                .ground_truth
                .iter()
                .find(|(gid, _)| *gid == id)
                .expect("matched id exists")
                .1;
            rot_errors.push(rotation_error_mod_symmetry(&estimate.pose, &gt, &symmetries).to_degrees());
            trans_errors.push(trans_err);

            if estimate.provenance == Provenance::Reused {
                reused_total += 1;
                // a reused estimate must describe an object that did not
                // move since the previous capture (beyond the merge floor)
                if k > 0 {
                    let prev_gt = records[k - 1]
                        .ground_truth
                        .iter()
                        .find(|(gid, _)| *gid == id)
                        .map(|(_, p)| *p);
                    let moved = match prev_gt {
                        Some(prev) => pose_motion(&prev, &gt, model_radius),
                        None => f64::INFINITY,
                    };
                    if moved > 2.0 * config.merge.min_distance {
                        false_reuse += 1;
                    }
                }
            }
        }
        let stats = |v: &[f64]| -> (Option<f64>, Option<f64>) {
            if v.is_empty() {
                (None, None)
            } else {
                (
                    Some(v.iter().sum::<f64>() / v.len() as f64),
                    Some(v.iter().cloned().fold(f64::MIN, f64::max)),
                )
            }
        };
        let (mean_rot, max_rot) = stats(&rot_errors);
        let (mean_trans, max_trans) = stats(&trans_errors);
        per_trial.push(TrialMetrics {
            trial: record.trial,
            gated_segments: record.gated_segments,
            redetect_count: record.redetect_count,
            reused_count: record.reused_count,
            estimate_count: record.estimates.len(),
            evaluated: rot_errors.len(),
            mean_rotation_error_deg: mean_rot,
            max_rotation_error_deg: max_rot,
            mean_translation_error_m: mean_trans,
            max_translation_error_m: max_trans,
            picked_instance: record.picked_instance,
        });
    }
    let cumulative: usize = records.iter().map(|r| r.redetect_count).sum();
    let baseline: usize = records.iter().map(|r| r.gated_segments).sum();
    let metrics = SeriesMetrics {
        trial_count: records.len(),
        halted,
        per_trial,
        cumulative_detection_calls: cumulative,
        naive_baseline_calls: baseline,
        reused_total,
        false_reuse_count: false_reuse,
        false_reuse_rate: if reused_total == 0 {
            0.0
        } else {
            false_reuse as f64 / reused_total as f64
        },
    };
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    std::fs::write(out.join("timings.json"), serde_json::to_string_pretty(&timings)?)?;
    Ok((metrics, records))
}

/// [`run_series_with_records`] writing to the config's output directory.
pub fn run_series(config: &PipelineConfig) -> Result<SeriesMetrics> {
    let out = PathBuf::from(&config.output_dir);
    Ok(run_series_with_records(config, &out)?.0)
}
