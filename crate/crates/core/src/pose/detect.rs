//! Per-segment detection: coarse match, parallel ICP refinement, best-pick.

use rayon::prelude::*;

use crate::geom::RigidTransform;
use crate::segment::Segment;
use crate::sim::ObjectModel;

use super::{coarse_match, icp_refine, IcpParams, PoseEstimate, Provenance, ViewTemplate};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectParams {
    pub icp: IcpParams,
    /// Coarse candidates refined per segment.
    pub coarse_k: usize,
    /// Minimum fitness as a fraction of the segment size.
    pub accept_min_fitness: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            icp: IcpParams::default(),
            coarse_k: 5,
            accept_min_fitness: 0.5,
        }
    }
}

/// Is `a` a better detection than `b`? Highest fitness, then fewest
/// outliers, then lowest rms. The rms compares at 0.1 mm resolution; below
/// that the residuals are sampling noise and the earlier (better-ranked)
/// candidate should stand.
fn better(a: &PoseEstimate, b: &PoseEstimate) -> bool {
    let quantize = |rms: f64| (rms / 1e-4).floor() as i64;
    (a.fitness, std::cmp::Reverse(a.outliers))
        .cmp(&(b.fitness, std::cmp::Reverse(b.outliers)))
        .then(quantize(b.rms_error).cmp(&quantize(a.rms_error)))
        .is_gt()
}

/// Detects the object pose in one segment: refine the top-k coarse matches
/// and keep the strongest result. A rendered view's roll histogram is
/// 180-degree periodic whenever the silhouette is centrally symmetric, so
/// every candidate also refines with the opposite roll. `None` when nothing
/// reaches the acceptance fitness (junk segments, degenerate views, failed
/// matches).
pub fn detect_segment(
    segment: &Segment,
    templates: &[ViewTemplate],
    model: &ObjectModel,
    sensor_pose: &RigidTransform,
    params: &DetectParams,
) -> Option<PoseEstimate> {
    let matches = coarse_match(segment, templates, sensor_pose, params.coarse_k).ok()?;
    let seg_cloud = segment.cloud();
    let centroid = segment.centroid();
    let view_dir = (sensor_pose.translation() - centroid.coords()).normalize();
    let half_turn = {
        let spin = nalgebra::UnitQuaternion::from_axis_angle(
            &nalgebra::Unit::new_normalize(view_dir),
            std::f64::consts::PI,
        );
        RigidTransform::new(spin, centroid.coords() - spin * centroid.coords())
    };
    let mut best: Option<PoseEstimate> = None;
    for m in &matches {
        for init in [m.init_pose, half_turn.compose(&m.init_pose)] {
            let Ok(mut refined) =
                icp_refine(&seg_cloud, model.detection_cloud(), &init, &params.icp)
            else {
                continue;
            };
            refined.segment_id = segment.segment_id();
            refined.provenance = Provenance::Fresh;
            if best.as_ref().is_none_or(|b| better(&refined, b)) {
                best = Some(refined);
            }
        }
    }
    let best = best?;
    if (best.fitness as f64) < params.accept_min_fitness * segment.len() as f64 {
        return None;
    }
    Some(best)
}

/// Runs [`detect_segment`] over every segment. Results are ordered by
/// segment id and bit-identical for any worker count; `threads = 0` uses the
/// global pool.
pub fn detect_all(
    segments: &[Segment],
    templates: &[ViewTemplate],
    model: &ObjectModel,
    sensor_pose: &RigidTransform,
    params: &DetectParams,
    threads: usize,
) -> Vec<(usize, Option<PoseEstimate>)> {
    let run = || -> Vec<(usize, Option<PoseEstimate>)> {
        segments
            .par_iter()
            .map(|seg| {
                (
                    seg.segment_id(),
                    detect_segment(seg, templates, model, sensor_pose, params),
                )
            })
            .collect()
    };
    let mut out = if threads == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        pool.install(run)
    };
    out.sort_by_key(|(id, _)| *id);
    out
}

/// Detects every object in a segment. Non-clump segments yield at most one
/// estimate; clump-flagged segments detect iteratively, removing the points
/// each accepted estimate explains (within `outlier_dist`) and re-running on
/// the remainder until it shrinks below `min_remaining` or detection fails.
pub fn detect_segment_multi(
    segment: &Segment,
    templates: &[ViewTemplate],
    model: &ObjectModel,
    sensor_pose: &RigidTransform,
    params: &DetectParams,
    min_remaining: usize,
) -> Vec<PoseEstimate> {
    let mut out = Vec::new();
    let Some(first) = detect_segment(segment, templates, model, sensor_pose, params) else {
        return out;
    };
    out.push(first);
    if !segment.is_clump() {
        return out;
    }
    let parent = segment.parent();
    let mut remaining: Vec<usize> = segment.indices().to_vec();
    while out.len() < 4 {
        let last = out.last().expect("non-empty");
        let posed = crate::geom::apply_transform(model.detection_cloud(), &last.pose);
        let Ok(index) = crate::geom::build_nn_index(&posed) else {
            break;
        };
        remaining.retain(|&i| index.nearest(&parent.points()[i]).1 > params.icp.outlier_dist);
        if remaining.len() < min_remaining.max(1) {
            break;
        }
        let Ok(sub) = Segment::from_indices(
            std::sync::Arc::clone(parent),
            remaining.clone(),
            segment.segment_id(),
        ) else {
            break;
        };
        let Some(next) = detect_segment(&sub, templates, model, sensor_pose, params) else {
            break;
        };
        // a rediscovery of an already-output pose means the residual is just
        // unexplained rim noise
        let duplicate = out.iter().any(|e| {
            e.pose.translation_distance_to(&next.pose) < 0.005
                && e.pose.rotation_angle_to(&next.pose) < 0.1
        });
        if duplicate {
            break;
        }
        out.push(next);
    }
    out
}

/// [`detect_segment_multi`] over every segment, parallel and deterministic,
/// ordered by segment id.
pub fn detect_all_multi(
    segments: &[Segment],
    templates: &[ViewTemplate],
    model: &ObjectModel,
    sensor_pose: &RigidTransform,
    params: &DetectParams,
    min_remaining: usize,
    threads: usize,
) -> Vec<(usize, Vec<PoseEstimate>)> {
    let run = || -> Vec<(usize, Vec<PoseEstimate>)> {
        segments
            .par_iter()
            .map(|seg| {
                (
                    seg.segment_id(),
                    detect_segment_multi(seg, templates, model, sensor_pose, params, min_remaining),
                )
            })
            .collect()
    };
    let mut out = if threads == 0 {
        run()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction");
        pool.install(run)
    };
    out.sort_by_key(|(id, _)| *id);
    out
}
