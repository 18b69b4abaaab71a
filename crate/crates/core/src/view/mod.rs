//! Sensor pose planning.
//!
//! Candidate poses sit on lines through the face centers of a regular
//! polyhedron whose center coincides with the center of the box bottom, at a
//! ladder of distances, each aimed at that center. Candidates pass three
//! feasibility checks, then the one exposing the most of the pile wins:
//! on the first trial the pose seeing the most of the box bottom, afterwards
//! the pose turning the most occluded grid cells visible.

mod grid;

pub use grid::{
    build_grid, load_grid_json, mark_cells, save_grid_json, save_grid_ply, CellState, Frustum,
    MarkParams, OccupancyGrid,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{Aabb, Point3, RigidTransform};
use crate::Result;

/// Default points-per-cell threshold for occupied marking; isolated noise
/// points do not occupy a cell.
pub const DEFAULT_MIN_POINTS_PER_CELL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPlanParams {
    /// Faces of the sampling polyhedron: 4, 6, 8, 12, or 20.
    pub n_faces: usize,
    /// Strictly increasing stand-off distances from the box-bottom center.
    pub distances: Vec<f64>,
    /// Occupancy grid resolution.
    pub cell_size: f64,
    /// Points required in a cell before it marks occupied.
    pub min_points_per_cell: usize,
}

impl Default for ViewPlanParams {
    fn default() -> Self {
        ViewPlanParams {
            n_faces: 20,
            distances: vec![0.45, 0.60, 0.75],
            cell_size: 0.01,
            min_points_per_cell: DEFAULT_MIN_POINTS_PER_CELL,
        }
    }
}

impl ViewPlanParams {
    pub fn validate(&self) -> Result<()> {
        if ![4, 6, 8, 12, 20].contains(&self.n_faces) {
            return Err(Error::validation(
                "n_faces",
                format!("{} is not a regular polyhedron face count", self.n_faces),
            ));
        }
        if self.distances.is_empty() {
            return Err(Error::validation("distances", "need at least one distance"));
        }
        let mut prev = 0.0;
        for &d in &self.distances {
            if d <= prev || !d.is_finite() {
                return Err(Error::validation(
                    "distances",
                    "must be strictly positive and strictly increasing",
                ));
            }
            prev = d;
        }
        if self.cell_size <= 0.0 {
            return Err(Error::validation("cell_size", "must be positive"));
        }
        Ok(())
    }
}

/// One candidate sensor pose: optical axis through the box-bottom center.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorPoseCandidate {
    pub pose: RigidTransform,
    pub face_index: usize,
    pub distance_index: usize,
}

/// Sensor pose at `position` with the optical axis (+z) through `target`.
/// The image x-axis aligns with the projection of world +x onto the image
/// plane; if that projection degenerates, world +y is used instead.
pub fn look_at_pose(position: &Point3, target: &Point3) -> RigidTransform {
    let z = (target.coords() - position.coords()).normalize();
    let r = crate::geom::basis_with_z(z);
    RigidTransform::from_matrix(r, position.coords()).expect("constructed basis is orthonormal")
}

/// Unit face normals of the regular polyhedron with `n` faces.
fn face_normals(n: usize) -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let normed = |v: Vector3<f64>| v.normalize();
    match n {
        4 => vec![
            normed(Vector3::new(1.0, 1.0, 1.0)),
            normed(Vector3::new(1.0, -1.0, -1.0)),
            normed(Vector3::new(-1.0, 1.0, -1.0)),
            normed(Vector3::new(-1.0, -1.0, 1.0)),
        ],
        6 => vec![
            Vector3::x(),
            -Vector3::x(),
            Vector3::y(),
            -Vector3::y(),
            Vector3::z(),
            -Vector3::z(),
        ],
        8 => {
            let mut out = Vec::with_capacity(8);
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    for sz in [1.0, -1.0] {
                        out.push(normed(Vector3::new(sx, sy, sz)));
                    }
                }
            }
            out
        }
        12 => {
            // dodecahedron face normals = icosahedron vertex directions
            let mut out = Vec::with_capacity(12);
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    out.push(normed(Vector3::new(0.0, s1, s2 * phi)));
                    out.push(normed(Vector3::new(s1, s2 * phi, 0.0)));
                    out.push(normed(Vector3::new(s1 * phi, 0.0, s2)));
                }
            }
            out
        }
        20 => {
            // icosahedron face normals = dodecahedron vertex directions
            let inv_phi = 1.0 / phi;
            let mut out = Vec::with_capacity(20);
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    for sz in [1.0, -1.0] {
                        out.push(normed(Vector3::new(sx, sy, sz)));
                    }
                }
            }
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    out.push(normed(Vector3::new(0.0, s1 * inv_phi, s2 * phi)));
                    out.push(normed(Vector3::new(s1 * inv_phi, s2 * phi, 0.0)));
                    out.push(normed(Vector3::new(s1 * phi, 0.0, s2 * inv_phi)));
                }
            }
            out
        }
        other => unreachable!("validate() rejects n_faces = {other}"),
    }
}

/// Enumerates all face x distance candidates around the box-bottom center.
pub fn candidate_poses(bin: &Aabb, params: &ViewPlanParams) -> Result<Vec<SensorPoseCandidate>> {
    params.validate()?;
    let center = Point3::new(
        (bin.min.x + bin.max.x) / 2.0,
        (bin.min.y + bin.max.y) / 2.0,
        bin.min.z,
    );
    let normals = face_normals(params.n_faces);
    let mut out = Vec::with_capacity(normals.len() * params.distances.len());
    for (face_index, dir) in normals.iter().enumerate() {
        for (distance_index, &l) in params.distances.iter().enumerate() {
            let position = Point3::from_coords(center.coords() + dir * l);
            out.push(SensorPoseCandidate {
                pose: look_at_pose(&position, &center),
                face_index,
                distance_index,
            });
        }
    }
    Ok(out)
}

/// Per-pose feasibility verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feasibility {
    pub above_bottom: bool,
    pub reachable: bool,
    pub collision_free: bool,
}

impl Feasibility {
    pub fn ok(&self) -> bool {
        self.above_bottom && self.reachable && self.collision_free
    }
}

/// Abstracts the robot-specific checks: above the box bottom, kinematically
/// reachable, collision free. Must be deterministic per pose.
pub trait FeasibilityPredicate {
    fn assess(&self, cand: &SensorPoseCandidate) -> Feasibility;
}

/// Geometric stand-in for a real robot: reachability is a workspace sphere,
/// collision is sensor-clearance against the box solid.
#[derive(Debug, Clone)]
pub struct DefaultFeasibility {
    pub bin: Aabb,
    pub workspace_center: Point3,
    pub workspace_radius: f64,
    pub sensor_clearance: f64,
}

impl DefaultFeasibility {
    pub fn for_box(bin: Aabb) -> Self {
        let c = bin.center();
        DefaultFeasibility {
            bin,
            workspace_center: Point3::new(c.x, c.y, bin.min.z + 0.5),
            workspace_radius: 0.8,
            sensor_clearance: 0.05,
        }
    }
}

impl FeasibilityPredicate for DefaultFeasibility {
    fn assess(&self, cand: &SensorPoseCandidate) -> Feasibility {
        let p = Point3::from_coords(cand.pose.translation());
        let sensor_box = Aabb::new(p, p).inflate(self.sensor_clearance);
        Feasibility {
            above_bottom: p.z >= self.bin.min.z,
            reachable: p.distance(&self.workspace_center) <= self.workspace_radius,
            collision_free: !sensor_box.intersects(&self.bin),
        }
    }
}

/// Keeps the candidates passing all three checks, order preserved.
pub fn filter_feasible(
    cands: &[SensorPoseCandidate],
    pred: &dyn FeasibilityPredicate,
) -> Result<Vec<SensorPoseCandidate>> {
    let kept: Vec<SensorPoseCandidate> = cands
        .iter()
        .filter(|c| pred.assess(c).ok())
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::NoFeasibleCandidate);
    }
    Ok(kept)
}

/// The four box walls as rectangles in x/y planes.
fn wall_rects(bin: &Aabb) -> [(usize, f64, [f64; 2], [f64; 2]); 4] {
    // (fixed axis, plane coordinate, span on the other horizontal axis, z span)
    [
        (0, bin.min.x, [bin.min.y, bin.max.y], [bin.min.z, bin.max.z]),
        (0, bin.max.x, [bin.min.y, bin.max.y], [bin.min.z, bin.max.z]),
        (1, bin.min.y, [bin.min.x, bin.max.x], [bin.min.z, bin.max.z]),
        (1, bin.max.y, [bin.min.x, bin.max.x], [bin.min.z, bin.max.z]),
    ]
}

/// Does the open segment from `a` to `b` cross one of the box walls?
fn segment_hits_wall(a: &Point3, b: &Point3, bin: &Aabb) -> bool {
    for (axis, plane, span, z_span) in wall_rects(bin) {
        let (pa, pb) = match axis {
            0 => (a.x, b.x),
            _ => (a.y, b.y),
        };
        let denom = pb - pa;
        if denom.abs() < 1e-15 {
            continue;
        }
        let t = (plane - pa) / denom;
        if t <= 1e-9 || t >= 1.0 - 1e-9 {
            continue;
        }
        let hit = Point3::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.z + t * (b.z - a.z),
        );
        let other = match axis {
            0 => hit.y,
            _ => hit.x,
        };
        if other >= span[0] && other <= span[1] && hit.z >= z_span[0] && hit.z <= z_span[1] {
            return true;
        }
    }
    false
}

/// First-trial score: bottom-layer cells of the grid visible from the
/// candidate (inside the frustum, path not blocked by a box wall). Higher is
/// better; maximizing visible bottom cells minimizes the occluded bottom
/// area.
pub fn score_first_trial(
    cand: &SensorPoseCandidate,
    grid: &OccupancyGrid,
    bin: &Aabb,
    frustum: &Frustum,
) -> usize {
    let origin = Point3::from_coords(cand.pose.translation());
    let inv_pose = cand.pose.inverse();
    let mut score = 0;
    for iy in 0..grid.dims()[1] {
        for ix in 0..grid.dims()[0] {
            let center = grid.cell_center(ix, iy, 0);
            if frustum.contains(&inv_pose, &center) && !segment_hits_wall(&origin, &center, bin) {
                score += 1;
            }
        }
    }
    score
}

/// Later-trial score: cells marked occluded by the previous capture that the
/// candidate would see (inside the frustum, no occupied cell on the path).
pub fn score_next_trial(
    cand: &SensorPoseCandidate,
    grid: &OccupancyGrid,
    frustum: &Frustum,
) -> Result<usize> {
    if grid.count(CellState::Occupied) == 0 && grid.count(CellState::Occluded) == 0 {
        return Err(Error::GridUnmarked);
    }
    let origin = Point3::from_coords(cand.pose.translation());
    let inv_pose = cand.pose.inverse();
    let mut score = 0;
    for iz in 0..grid.dims()[2] {
        for iy in 0..grid.dims()[1] {
            for ix in 0..grid.dims()[0] {
                if grid.state(ix, iy, iz) != CellState::Occluded {
                    continue;
                }
                let center = grid.cell_center(ix, iy, iz);
                if frustum.contains(&inv_pose, &center) && !grid.ray_blocked(&origin, [ix, iy, iz])
                {
                    score += 1;
                }
            }
        }
    }
    Ok(score)
}

/// Bottom-layer resolution used when `select_pose` has no grid yet.
const FIRST_TRIAL_CELL: f64 = 0.01;

/// Argmax over candidates: first-trial scoring when `grid` is `None` (the
/// pile has not been captured yet, only the walls matter), later-trial
/// scoring against the previous capture's marking otherwise. Ties break to
/// the smaller distance index, then the smaller face index.
pub fn select_pose(
    cands: &[SensorPoseCandidate],
    grid: Option<&OccupancyGrid>,
    bin: &Aabb,
    frustum: &Frustum,
) -> Result<SensorPoseCandidate> {
    if cands.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let bottom_layout;
    let scores: Vec<usize> = match grid {
        None => {
            bottom_layout = build_grid(bin, FIRST_TRIAL_CELL, FIRST_TRIAL_CELL)?;
            cands
                .iter()
                .map(|c| score_first_trial(c, &bottom_layout, bin, frustum))
                .collect()
        }
        Some(g) => cands
            .iter()
            .map(|c| score_next_trial(c, g, frustum))
            .collect::<Result<_>>()?,
    };
    let mut best = 0usize;
    for i in 1..cands.len() {
        if better_candidate(scores[i], &cands[i], scores[best], &cands[best]) {
            best = i;
        }
    }
    Ok(cands[best].clone())
}

fn better_candidate(
    score: usize,
    cand: &SensorPoseCandidate,
    best_score: usize,
    best: &SensorPoseCandidate,
) -> bool {
    (score, std::cmp::Reverse(cand.distance_index), std::cmp::Reverse(cand.face_index))
        > (
            best_score,
            std::cmp::Reverse(best.distance_index),
            std::cmp::Reverse(best.face_index),
        )
}
