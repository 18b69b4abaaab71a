//! Occupancy grid over the box volume.
//!
//! Cells are `occupied` when enough captured points fall inside, `occluded`
//! when the straight path from the sensor crosses an occupied cell first,
//! `free` when the unobstructed cell lies inside the sensor frustum, and
//! `unknown` otherwise. Visibility uses a fixed fine-step march along the
//! sensor ray (step = cell_size / 10); the same rule scores candidates, so
//! marking and scoring agree exactly.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Error;
use crate::geom::{Aabb, Frame, Point3, PointCloud, RigidTransform};
use crate::sim::SensorIntrinsics;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
    Occluded,
}

/// Axis-aligned voxel grid covering the box footprint up to a configured
/// height. Marking returns a new grid; values are never mutated in place.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    origin: Point3,
    cell_size: f64,
    dims: [usize; 3],
    cells: Vec<CellState>,
}

/// View-volume test for a pinhole sensor.
#[derive(Debug, Clone, Copy)]
pub struct Frustum {
    pub tan_half_h: f64,
    pub tan_half_v: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Frustum {
    pub fn from_intrinsics(intr: &SensorIntrinsics) -> Self {
        Frustum {
            tan_half_h: (intr.horizontal_fov / 2.0).tan(),
            tan_half_v: (intr.vertical_fov / 2.0).tan(),
            min_range: intr.min_range,
            max_range: intr.max_range,
        }
    }

    /// Is the world point inside the frustum of a sensor at `pose`?
    /// `inv_pose` must be `pose.inverse()`, hoisted out by callers that test
    /// many points.
    pub fn contains(&self, inv_pose: &RigidTransform, p: &Point3) -> bool {
        let q = inv_pose.apply(p);
        if q.z <= 0.0 {
            return false;
        }
        let range = q.coords().norm();
        range >= self.min_range
            && range <= self.max_range
            && q.x.abs() <= q.z * self.tan_half_h
            && q.y.abs() <= q.z * self.tan_half_v
    }
}

impl OccupancyGrid {
    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn states(&self) -> &[CellState] {
        &self.cells
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn state(&self, ix: usize, iy: usize, iz: usize) -> CellState {
        self.cells[self.index(ix, iy, iz)]
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        Point3::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
            self.origin.z + (iz as f64 + 0.5) * self.cell_size,
        )
    }

    /// Grid cell containing `p`, if inside the volume.
    pub fn cell_of(&self, p: &Point3) -> Option<[usize; 3]> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        let fz = (p.z - self.origin.z) / self.cell_size;
        if fx < 0.0 || fy < 0.0 || fz < 0.0 {
            return None;
        }
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        let iz = fz.floor() as usize;
        if ix >= self.dims[0] || iy >= self.dims[1] || iz >= self.dims[2] {
            return None;
        }
        Some([ix, iy, iz])
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    /// Is the straight path from `origin` to the center of cell `target`
    /// blocked by an occupied cell? Fine-step march, step = cell_size / 10;
    /// samples inside the target cell itself do not block.
    pub fn ray_blocked(&self, origin: &Point3, target: [usize; 3]) -> bool {
        let center = self.cell_center(target[0], target[1], target[2]);
        let delta = center.coords() - origin.coords();
        let length = delta.norm();
        if length < 1e-12 {
            return false;
        }
        let dir = delta / length;
        let step = self.cell_size / 10.0;
        let mut k = 1usize;
        loop {
            let t = k as f64 * step;
            if t >= length {
                return false;
            }
            let p = Point3::from_coords(origin.coords() + dir * t);
            if let Some(c) = self.cell_of(&p) {
                if c != target && self.state(c[0], c[1], c[2]) == CellState::Occupied {
                    return true;
                }
            }
            k += 1;
        }
    }
}

/// Builds a grid over the box footprint, `height` meters tall, all cells
/// unknown. Footprint overhang from non-divisible extents is symmetric; the
/// grid base sits exactly on the box floor.
pub fn build_grid(bin: &Aabb, cell_size: f64, height: f64) -> Result<OccupancyGrid> {
    if cell_size <= 0.0 || !cell_size.is_finite() {
        return Err(Error::NonPositiveParam {
            name: "cell_size",
            value: cell_size,
        });
    }
    if height <= 0.0 || !height.is_finite() {
        return Err(Error::NonPositiveParam {
            name: "height",
            value: height,
        });
    }
    let cells_for = |extent: f64| ((extent / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let nx = cells_for(bin.max.x - bin.min.x);
    let ny = cells_for(bin.max.y - bin.min.y);
    let nz = cells_for(height);
    let center = bin.center();
    let origin = Point3::new(
        center.x - nx as f64 * cell_size / 2.0,
        center.y - ny as f64 * cell_size / 2.0,
        bin.min.z,
    );
    Ok(OccupancyGrid {
        origin,
        cell_size,
        dims: [nx, ny, nz],
        cells: vec![CellState::Unknown; nx * ny * nz],
    })
}

/// Parameters for occupancy marking.
#[derive(Debug, Clone, Copy)]
pub struct MarkParams {
    /// Points needed inside a cell before it counts as occupied.
    pub min_points_per_cell: usize,
    pub frustum: Frustum,
}

/// Marks occupancy from a world-frame capture taken at `sensor`. Returns a
/// new grid: occupied dominates occluded dominates free; cells outside the
/// frustum with an unobstructed path keep their prior state.
pub fn mark_cells(
    grid: &OccupancyGrid,
    cloud: &PointCloud,
    sensor: &RigidTransform,
    params: &MarkParams,
) -> Result<OccupancyGrid> {
    if cloud.frame() != Frame::World {
        return Err(Error::FrameMismatch {
            expected: Frame::World,
            found: cloud.frame(),
        });
    }
    let mut counts = vec![0usize; grid.cells.len()];
    for p in cloud.points() {
        if let Some([ix, iy, iz]) = grid.cell_of(p) {
            counts[grid.index(ix, iy, iz)] += 1;
        }
    }
    let mut out = grid.clone();
    for (i, &n) in counts.iter().enumerate() {
        if n >= params.min_points_per_cell {
            out.cells[i] = CellState::Occupied;
        }
    }
    let origin = Point3::from_coords(sensor.translation());
    let inv_pose = sensor.inverse();
    for iz in 0..out.dims[2] {
        for iy in 0..out.dims[1] {
            for ix in 0..out.dims[0] {
                let i = out.index(ix, iy, iz);
                if out.cells[i] == CellState::Occupied {
                    continue;
                }
                if out.ray_blocked(&origin, [ix, iy, iz]) {
                    out.cells[i] = CellState::Occluded;
                } else if params
                    .frustum
                    .contains(&inv_pose, &out.cell_center(ix, iy, iz))
                {
                    out.cells[i] = CellState::Free;
                }
                // otherwise the prior state stands
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    dims: [usize; 3],
    origin: [f64; 3],
    cell_size: f64,
    /// Run-length encoded states in linear cell order (x fastest).
    states_rle: Vec<(usize, CellState)>,
}

pub fn save_grid_json(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let mut rle: Vec<(usize, CellState)> = Vec::new();
    for &s in &grid.cells {
        match rle.last_mut() {
            Some((n, last)) if *last == s => *n += 1,
            _ => rle.push((1, s)),
        }
    }
    let file = GridFile {
        dims: grid.dims,
        origin: grid.origin.into(),
        cell_size: grid.cell_size,
        states_rle: rle,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_grid_json(path: &Path) -> Result<OccupancyGrid> {
    let file: GridFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut cells = Vec::with_capacity(file.dims.iter().product());
    for (n, s) in &file.states_rle {
        cells.extend(std::iter::repeat_n(*s, *n));
    }
    if cells.len() != file.dims.iter().product::<usize>() {
        return Err(Error::parse(
            path.display().to_string(),
            "RLE length does not match dims",
        ));
    }
    Ok(OccupancyGrid {
        origin: file.origin.into(),
        cell_size: file.cell_size,
        dims: file.dims,
        cells,
    })
}

/// Writes occupied (red) and occluded (green) cell centers as a colored PLY
/// for offline viewing.
pub fn save_grid_ply(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for iz in 0..grid.dims[2] {
        for iy in 0..grid.dims[1] {
            for ix in 0..grid.dims[0] {
                match grid.state(ix, iy, iz) {
                    CellState::Occupied => {
                        points.push(grid.cell_center(ix, iy, iz));
                        colors.push([255u8, 0, 0]);
                    }
                    CellState::Occluded => {
                        points.push(grid.cell_center(ix, iy, iz));
                        colors.push([0u8, 255, 0]);
                    }
                    _ => {}
                }
            }
        }
    }
    crate::io::write_ply_points_colored(path, &points, &colors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::look_at_pose;

    fn test_bin() -> Aabb {
        Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(0.4, 0.3, 0.15))
    }

    fn wide_frustum() -> Frustum {
        Frustum {
            tan_half_h: 1.2,
            tan_half_v: 1.2,
            min_range: 0.01,
            max_range: 10.0,
        }
    }

    #[test]
    fn grid_dims_from_division() {
        let bin = Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(0.4, 0.3, 0.2));
        let g = build_grid(&bin, 0.1, 0.2).unwrap();
        assert_eq!(g.dims(), [4, 3, 2]);
        assert!(g.states().iter().all(|&s| s == CellState::Unknown));
    }

    #[test]
    fn non_divisible_extent_overhangs_symmetrically() {
        let bin = Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(0.35, 0.3, 0.2));
        let g = build_grid(&bin, 0.1, 0.2).unwrap();
        assert_eq!(g.dims()[0], 4);
        let overhang = 4.0 * 0.1 - 0.35;
        // left and right overhang equal: origin sits half the excess outside
        assert!((g.origin().x - (-overhang / 2.0)).abs() < 1e-12);
        let right_edge = g.origin().x + 4.0 * 0.1;
        assert!((right_edge - (0.35 + overhang / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_params() {
        let bin = test_bin();
        assert!(matches!(
            build_grid(&bin, 0.0, 0.1),
            Err(Error::NonPositiveParam { name: "cell_size", .. })
        ));
        assert!(matches!(
            build_grid(&bin, 0.1, -1.0),
            Err(Error::NonPositiveParam { name: "height", .. })
        ));
    }

    #[test]
    fn empty_cloud_marks_frustum_free() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let c = bin.center();
        let sensor = look_at_pose(&Point3::new(c.x, c.y, 0.6), &Point3::new(c.x, c.y, 0.0));
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let marked = mark_cells(&g, &PointCloud::empty(Frame::World), &sensor, &params).unwrap();
        assert_eq!(marked.count(CellState::Occupied), 0);
        assert_eq!(marked.count(CellState::Occluded), 0);
        assert_eq!(marked.count(CellState::Free), marked.len());
    }

    #[test]
    fn single_occupied_cell_shadows_column_below() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        // drop enough points into the cell at (4, 3, 2)
        let center = g.cell_center(4, 3, 2);
        let cloud = PointCloud::new(vec![center; 5], Frame::World);
        let sensor = look_at_pose(
            &Point3::new(center.x, center.y, 1.0),
            &Point3::new(center.x, center.y, 0.0),
        );
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let marked = mark_cells(&g, &cloud, &sensor, &params).unwrap();
        assert_eq!(marked.state(4, 3, 2), CellState::Occupied);
        assert_eq!(marked.state(4, 3, 1), CellState::Occluded);
        assert_eq!(marked.state(4, 3, 0), CellState::Occluded);
        // a neighboring column is unaffected
        assert_eq!(marked.state(3, 3, 0), CellState::Free);
    }

    #[test]
    fn occupied_needs_minimum_points() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let center = g.cell_center(2, 2, 1);
        let cloud = PointCloud::new(vec![center; 2], Frame::World);
        let sensor = look_at_pose(&Point3::new(0.2, 0.15, 0.8), &Point3::new(0.2, 0.15, 0.0));
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let marked = mark_cells(&g, &cloud, &sensor, &params).unwrap();
        assert_eq!(marked.count(CellState::Occupied), 0);
    }

    #[test]
    fn marking_rejects_non_world_frames() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let cloud = PointCloud::empty(Frame::Sensor);
        let sensor = RigidTransform::identity();
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        assert!(matches!(
            mark_cells(&g, &cloud, &sensor, &params),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn marking_is_monotone_in_points() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let sensor = look_at_pose(&Point3::new(0.2, 0.15, 0.7), &Point3::new(0.2, 0.15, 0.0));
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let base: Vec<Point3> = vec![g.cell_center(1, 1, 1); 4];
        let marked_small = mark_cells(&g, &PointCloud::new(base.clone(), Frame::World), &sensor, &params).unwrap();
        let mut more = base;
        more.extend(vec![g.cell_center(6, 4, 2); 4]);
        let marked_big = mark_cells(&g, &PointCloud::new(more, Frame::World), &sensor, &params).unwrap();
        for i in 0..marked_small.len() {
            if marked_small.cells[i] == CellState::Occupied {
                assert_eq!(marked_big.cells[i], CellState::Occupied);
            }
        }
    }

    #[test]
    fn no_cell_is_both_occupied_and_occluded() {
        // dominance is structural (single state per cell); spot-check a
        // random-ish marking
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let mut pts = Vec::new();
        for i in 0..6 {
            pts.extend(vec![g.cell_center(i, i % 3, (i % 2) + 1); 4]);
        }
        let sensor = look_at_pose(&Point3::new(0.1, 0.1, 0.9), &Point3::new(0.2, 0.15, 0.0));
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let marked = mark_cells(&g, &PointCloud::new(pts, Frame::World), &sensor, &params).unwrap();
        assert!(marked.count(CellState::Occupied) >= 5);
        assert!(marked.count(CellState::Occluded) > 0);
    }

    #[test]
    fn grid_json_roundtrip() {
        let bin = test_bin();
        let g = build_grid(&bin, 0.05, 0.15).unwrap();
        let cloud = PointCloud::new(vec![g.cell_center(3, 2, 1); 5], Frame::World);
        let sensor = look_at_pose(&Point3::new(0.2, 0.15, 0.8), &Point3::new(0.2, 0.15, 0.0));
        let params = MarkParams {
            min_points_per_cell: 3,
            frustum: wide_frustum(),
        };
        let marked = mark_cells(&g, &cloud, &sensor, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        save_grid_json(&path, &marked).unwrap();
        let back = load_grid_json(&path).unwrap();
        assert_eq!(marked, back);
    }
}
