//! Cross-trial cloud merging and pose reuse.
//!
//! Between picking trials most of the pile is unchanged. Each current point
//! votes for the previous segment owning its nearest previous point: a near
//! vote when that distance is under `min_distance`, a far vote otherwise. A
//! previous segment whose far/near ratio stays below `ratio_threshold` is
//! carried into the current cloud, filling regions the new capture cannot
//! see. After re-segmentation, segments still lying on a previously
//! estimated object reuse that estimate instead of being re-detected.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{apply_transform, build_nn_index, Frame, Point3, PointCloud};
use crate::pose::{PoseEstimate, Provenance};
use crate::segment::Segment;
use crate::sim::ObjectModel;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Vote radius: a current point within this distance of its nearest
    /// previous point counts as near.
    pub min_distance: f64,
    /// Segments merge while far/near stays below this.
    pub ratio_threshold: f64,
    /// Median segment-to-model distance under which a previous pose estimate
    /// is reused.
    pub reuse_distance: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            min_distance: 0.005,
            ratio_threshold: 0.5,
            reuse_distance: 0.01,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_distance", self.min_distance),
            ("ratio_threshold", self.ratio_threshold),
            ("reuse_distance", self.reuse_distance),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Where a merged-cloud point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointOrigin {
    Current,
    Carried,
}

/// Vote tallies and merge decisions, one row per previous segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeReport {
    pub per_segment: Vec<SegmentVotes>,
    /// Current points whose nearest previous point belongs to no retained
    /// segment (plane or dropped-cluster points).
    pub unsegmented_votes: usize,
    pub merged_cloud_size: usize,
    pub merged_segment_ids: Vec<usize>,
    pub rejected_segment_ids: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentVotes {
    pub segment_id: usize,
    pub near_count: usize,
    pub far_count: usize,
    /// far/near; `None` when near is zero (infinite for far > 0, undefined
    /// for a fully unseen segment).
    pub ratio: Option<f64>,
    pub merged: bool,
}

/// Output of [`merge_clouds`]: the combined cloud and per-point origins.
#[derive(Debug, Clone)]
pub struct MergedCloud {
    pub cloud: PointCloud,
    pub origins: Vec<PointOrigin>,
}

/// Merges unchanged previous segments into the current capture.
///
/// All `prev_segments` must share one parent cloud (the previous trial's
/// full cloud; unsegmented parent points absorb votes silently). A segment
/// with far/near below the threshold merges; a segment with near votes only
/// merges; a completely unseen segment (zero votes) merges, since filling
/// occluded regions is the point of carrying data forward; near = 0 with far
/// votes means the region changed, so the segment is dropped.
pub fn merge_clouds(
    prev_segments: &[Segment],
    current: &PointCloud,
    params: &MergeParams,
) -> Result<(MergedCloud, MergeReport)> {
    params.validate()?;
    if prev_segments.is_empty() {
        return Err(Error::NoPreviousSegments);
    }
    let parent = prev_segments[0].parent();
    if !prev_segments
        .iter()
        .all(|s| Arc::ptr_eq(s.parent(), parent))
    {
        return Err(Error::InconsistentParents);
    }

    // previous point index -> owning segment position
    let mut owner = vec![usize::MAX; parent.len()];
    for (pos, seg) in prev_segments.iter().enumerate() {
        for &i in seg.indices() {
            owner[i] = pos;
        }
    }

    let mut near = vec![0usize; prev_segments.len()];
    let mut far = vec![0usize; prev_segments.len()];
    let mut unsegmented_votes = 0usize;
    if !current.is_empty() {
        let index = build_nn_index(parent)?;
        for p in current.points() {
            let (k, d) = index.nearest(p);
            let seg = owner[k];
            if seg == usize::MAX {
                unsegmented_votes += 1;
            } else if d < params.min_distance {
                near[seg] += 1;
            } else {
                far[seg] += 1;
            }
        }
    }

    let mut per_segment = Vec::with_capacity(prev_segments.len());
    let mut merged_points: Vec<Point3> = current.points().to_vec();
    let mut origins = vec![PointOrigin::Current; current.len()];
    let mut merged_ids = Vec::new();
    let mut rejected_ids = Vec::new();
    for (pos, seg) in prev_segments.iter().enumerate() {
        let (n, f) = (near[pos], far[pos]);
        let (ratio, merged) = match (n, f) {
            (0, 0) => (None, true),
            (0, _) => (None, false),
            (n, f) => {
                let r = f as f64 / n as f64;
                (Some(r), r < params.ratio_threshold)
            }
        };
        if merged {
            merged_ids.push(seg.segment_id());
            for &i in seg.indices() {
                merged_points.push(parent.points()[i]);
                origins.push(PointOrigin::Carried);
            }
        } else {
            rejected_ids.push(seg.segment_id());
        }
        per_segment.push(SegmentVotes {
            segment_id: seg.segment_id(),
            near_count: n,
            far_count: f,
            ratio,
            merged,
        });
    }

    let report = MergeReport {
        per_segment,
        unsegmented_votes,
        merged_cloud_size: merged_points.len(),
        merged_segment_ids: merged_ids,
        rejected_segment_ids: rejected_ids,
    };
    Ok((
        MergedCloud {
            cloud: PointCloud::new(merged_points, Frame::World),
            origins,
        },
        report,
    ))
}

/// What to do with one re-segmented merged segment.
#[derive(Debug, Clone)]
pub struct SegmentDecision {
    pub segment_id: usize,
    pub action: SegmentAction,
}

#[derive(Debug, Clone)]
pub enum SegmentAction {
    /// The segment still lies on this previously estimated object.
    Reuse(PoseEstimate),
    Redetect,
}

impl SegmentDecision {
    pub fn is_reuse(&self) -> bool {
        matches!(self.action, SegmentAction::Reuse(_))
    }
}

/// Median of the distances from each segment point to the posed model cloud.
fn median_distance_to_model(seg: &Segment, model_index: &crate::geom::NnIndex) -> f64 {
    let mut dists: Vec<f64> = seg
        .indices()
        .iter()
        .map(|&i| model_index.nearest(&seg.parent().points()[i]).1)
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[(dists.len() - 1) / 2]
}

/// Assigns previous pose estimates to merged segments. A segment whose
/// median distance to some previously estimated object's surface is under
/// `reuse_distance` reuses that estimate; each estimate serves at most one
/// segment (greedy, closest pair first). Everything else re-detects.
pub fn decide_reuse(
    merged_segments: &[Segment],
    prev_estimates: &[PoseEstimate],
    model: &ObjectModel,
    params: &MergeParams,
) -> Result<Vec<SegmentDecision>> {
    params.validate()?;
    let posed_indices: Vec<crate::geom::NnIndex> = prev_estimates
        .iter()
        .map(|e| {
            let posed = apply_transform(model.detection_cloud(), &e.pose);
            build_nn_index(&posed)
        })
        .collect::<Result<_>>()?;

    // candidate (median, segment position, estimate position), ascending
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (si, seg) in merged_segments.iter().enumerate() {
        for (ei, index) in posed_indices.iter().enumerate() {
            let median = median_distance_to_model(seg, index);
            if median < params.reuse_distance {
                candidates.push((median, si, ei));
            }
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut seg_assigned = vec![false; merged_segments.len()];
    let mut est_assigned = vec![false; prev_estimates.len()];
    let mut assignment: Vec<Option<usize>> = vec![None; merged_segments.len()];
    for (_, si, ei) in candidates {
        if !seg_assigned[si] && !est_assigned[ei] {
            seg_assigned[si] = true;
            est_assigned[ei] = true;
            assignment[si] = Some(ei);
        }
    }

    Ok(merged_segments
        .iter()
        .enumerate()
        .map(|(si, seg)| SegmentDecision {
            segment_id: seg.segment_id(),
            action: match assignment[si] {
                Some(ei) => {
                    let mut est = prev_estimates[ei].clone();
                    est.provenance = Provenance::Reused;
                    SegmentAction::Reuse(est)
                }
                None => SegmentAction::Redetect,
            },
        })
        .collect())
}
