//! Shared test oracles, kept independent of the library's implementation
//! paths: plain double loops, no spatial indices.

use binpick_core::geom::Point3;

/// Which cloud drives the vote loop. The pipeline iterates current points
/// and votes via the nearest previous point's segment;
/// `PreviousAgainstCurrent` is the alternative reading (each previous point
/// votes with its distance to the current cloud), kept for comparison.
#[derive(Clone, Copy, PartialEq)]
#[allow(dead_code)] // not every test binary exercises both readings
pub enum VoteReading {
    CurrentAgainstPrevious,
    PreviousAgainstCurrent,
}

pub struct ReferenceVotes {
    pub near: Vec<usize>,
    pub far: Vec<usize>,
    pub merged: Vec<bool>,
    pub unsegmented_votes: usize,
}

/// Brute-force vote counting: exhaustive nearest-neighbor scans with
/// smallest-index tie-breaks, then the merge rule (far/near below the
/// threshold merges; zero votes merges; near = 0 with far votes does not).
pub fn reference_merge(
    prev_cloud: &[Point3],
    segments: &[Vec<usize>],
    current: &[Point3],
    min_distance: f64,
    ratio_threshold: f64,
    reading: VoteReading,
) -> ReferenceVotes {
    let mut owner = vec![usize::MAX; prev_cloud.len()];
    for (s, indices) in segments.iter().enumerate() {
        for &i in indices {
            owner[i] = s;
        }
    }
    let nearest = |points: &[Point3], q: &Point3| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = p.distance(q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    };
    let mut near = vec![0usize; segments.len()];
    let mut far = vec![0usize; segments.len()];
    let mut unsegmented = 0usize;
    match reading {
        VoteReading::CurrentAgainstPrevious => {
            for q in current {
                let (k, d) = nearest(prev_cloud, q);
                if k == usize::MAX {
                    continue;
                }
                let s = owner[k];
                if s == usize::MAX {
                    unsegmented += 1;
                } else if d < min_distance {
                    near[s] += 1;
                } else {
                    far[s] += 1;
                }
            }
        }
        VoteReading::PreviousAgainstCurrent => {
            for (j, p) in prev_cloud.iter().enumerate() {
                let s = owner[j];
                if s == usize::MAX {
                    unsegmented += 1;
                    continue;
                }
                let (_, d) = nearest(current, p);
                if d < min_distance {
                    near[s] += 1;
                } else {
                    far[s] += 1;
                }
            }
        }
    }
    let merged = near
        .iter()
        .zip(&far)
        .map(|(&n, &f)| match (n, f) {
            (0, 0) => true,
            (0, _) => false,
            (n, f) => (f as f64 / n as f64) < ratio_threshold,
        })
        .collect();
    ReferenceVotes {
        near,
        far,
        merged,
        unsegmented_votes: unsegmented,
    }
}

use binpick_core::geom::{Frame, PointCloud};
use binpick_core::merge::{merge_clouds, MergeParams};
use binpick_core::segment::Segment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub struct MergeInstance {
    pub prev: Vec<Point3>,
    pub segments: Vec<Vec<usize>>,
    pub current: Vec<Point3>,
    pub params: MergeParams,
}

/// Random previous cloud of blob segments plus unsegmented scatter; the
/// current cloud re-observes some segments in place, shifts others, drops a
/// few entirely, and sprinkles noise.
pub fn random_merge_instance(seed: u64) -> MergeInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_segments = rng.random_range(2..=8);
    let mut prev = Vec::new();
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for _ in 0..n_segments {
        let center = [
            rng.random_range(0.0..0.5f64),
            rng.random_range(0.0..0.5f64),
            rng.random_range(0.0..0.15f64),
        ];
        let count = rng.random_range(10..=60);
        let start = prev.len();
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            points.push(Point3::new(
                center[0] + rng.random_range(-0.02..0.02),
                center[1] + rng.random_range(-0.02..0.02),
                center[2] + rng.random_range(-0.01..0.01),
            ));
        }
        prev.extend(points.iter().copied());
        segments.push((start..prev.len()).collect());

        // how the segment appears in the current capture
        match rng.random_range(0..4u8) {
            // unchanged: re-observed with sub-noise jitter
            0 => {
                for p in &points {
                    current.push(Point3::new(
                        p.x + rng.random_range(-0.001..0.001),
                        p.y + rng.random_range(-0.001..0.001),
                        p.z + rng.random_range(-0.001..0.001),
                    ));
                }
            }
            // shifted beyond the vote radius
            1 => {
                let dx = rng.random_range(0.01..0.04);
                for p in &points {
                    current.push(Point3::new(p.x + dx, p.y, p.z));
                }
            }
            // partially occluded: only a slice re-observed
            2 => {
                let keep = count / rng.random_range(2..4usize).max(2);
                for p in points.iter().take(keep.max(1)) {
                    current.push(*p);
                }
            }
            // removed: nothing re-observed
            _ => {}
        }
    }
    // unsegmented previous points (plane leftovers)
    for _ in 0..rng.random_range(0..40usize) {
        prev.push(Point3::new(
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.002),
        ));
    }
    // stray current noise
    for _ in 0..rng.random_range(0..30usize) {
        current.push(Point3::new(
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.15),
        ));
    }
    prev.truncate(500);
    current.truncate(500);
    let params = MergeParams {
        min_distance: rng.random_range(0.003..0.01),
        ratio_threshold: rng.random_range(0.2..1.2),
        reuse_distance: 0.01,
    };
    MergeInstance {
        prev,
        segments,
        current,
        params,
    }
}

/// Runs `n` randomized instances through both the pipeline and the
/// brute-force reference; returns (instances checked, mismatching rows).
pub fn merge_equivalence_check(n: u64) -> (usize, usize) {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for seed in 0..n {
        let inst = random_merge_instance(seed);
        if inst.prev.is_empty() || inst.segments.iter().all(|s| s.is_empty()) {
            continue;
        }
        let parent = Arc::new(PointCloud::new(inst.prev.clone(), Frame::World));
        let segments: Vec<Segment> = inst
            .segments
            .iter()
            .enumerate()
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(id, idx)| Segment::from_indices(Arc::clone(&parent), idx.clone(), id).unwrap())
            .collect();
        let current = PointCloud::new(inst.current.clone(), Frame::World);
        let (merged, report) = merge_clouds(&segments, &current, &inst.params).unwrap();
        let reference = reference_merge(
            &inst.prev,
            &inst.segments,
            &inst.current,
            inst.params.min_distance,
            inst.params.ratio_threshold,
            VoteReading::CurrentAgainstPrevious,
        );
        let mut expected_len = inst.current.len();
        for (s, idx) in inst.segments.iter().enumerate() {
            if reference.merged[s] {
                expected_len += idx.len();
            }
        }
        for (s, row) in report.per_segment.iter().enumerate() {
            if row.near_count != reference.near[s]
                || row.far_count != reference.far[s]
                || row.merged != reference.merged[s]
            {
                mismatches += 1;
            }
        }
        if report.unsegmented_votes != reference.unsegmented_votes
            || merged.cloud.len() != expected_len
        {
            mismatches += 1;
        }
        checked += 1;
    }
    (checked, mismatches)
}
