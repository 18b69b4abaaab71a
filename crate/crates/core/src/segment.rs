//! Pre-processing for detection: remove the dominant plane (the box bottom),
//! split the rest into Euclidean clusters, and keep the clusters whose
//! bounding box could plausibly hold at least one object.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{Aabb, NnIndex, Point3, PointCloud};
use crate::Result;

/// Fixed RANSAC schedule so plane extraction is reproducible.
const RANSAC_ITERATIONS: usize = 200;
const RANSAC_SEED: u64 = 0x9a5c;

/// Oversize clusters are kept (they may hold several touching objects) up to
/// this multiple of the model's largest extent.
const CLUMP_MAX_FACTOR: f64 = 2.5;

/// An index subset of a shared parent cloud, with cached bounds.
#[derive(Debug, Clone)]
pub struct Segment {
    parent: Arc<PointCloud>,
    indices: Vec<usize>,
    aabb: Aabb,
    centroid: Point3,
    segment_id: usize,
    clump: bool,
}

impl Segment {
    /// Builds a segment over sorted, unique, in-bounds indices.
    pub fn from_indices(parent: Arc<PointCloud>, mut indices: Vec<usize>, segment_id: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::validation("indices", "segment cannot be empty"));
        }
        indices.sort_unstable();
        indices.dedup();
        if *indices.last().unwrap() >= parent.len() {
            return Err(Error::validation("indices", "index out of parent bounds"));
        }
        let mut min = parent.points()[indices[0]];
        let mut max = min;
        let mut sum = Vector3::zeros();
        for &i in &indices {
            let p = parent.points()[i];
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            min.z = min.z.min(p.z);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
            max.z = max.z.max(p.z);
            sum += p.coords();
        }
        let centroid = Point3::from_coords(sum / indices.len() as f64);
        Ok(Segment {
            parent,
            indices,
            aabb: Aabb::new(min, max),
            centroid,
            segment_id,
            clump: false,
        })
    }

    pub fn parent(&self) -> &Arc<PointCloud> {
        &self.parent
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    pub fn centroid(&self) -> Point3 {
        self.centroid
    }

    pub fn segment_id(&self) -> usize {
        self.segment_id
    }

    /// Flagged when the segment is larger than one object and may hold a
    /// clump of touching instances.
    pub fn is_clump(&self) -> bool {
        self.clump
    }

    /// Materializes the segment's own cloud.
    pub fn cloud(&self) -> PointCloud {
        self.parent.select(&self.indices)
    }

    pub fn with_segment_id(mut self, id: usize) -> Self {
        self.segment_id = id;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Neighbor linking distance.
    pub tolerance: f64,
    pub min_size: usize,
    pub max_size: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            tolerance: 0.008,
            min_size: 30,
            max_size: usize::MAX,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.tolerance <= 0.0 || !self.tolerance.is_finite() {
            return Err(Error::validation("tolerance", "must be positive"));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::validation(
                "min_size",
                "need 1 <= min_size <= max_size",
            ));
        }
        Ok(())
    }
}

/// A plane in Hessian form: `normal . p + offset = 0`, unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3) -> f64 {
        (self.normal[0] * p.x + self.normal[1] * p.y + self.normal[2] * p.z + self.offset).abs()
    }
}

/// Result of plane extraction: the surviving points and where they live in
/// the input cloud.
#[derive(Debug, Clone)]
pub struct PlaneRemoval {
    pub remainder: PointCloud,
    /// Indices of the remainder points within the input cloud.
    pub kept_indices: Vec<usize>,
    pub plane: Option<Plane>,
}

fn fit_plane_least_squares(points: &[Point3], indices: &[usize]) -> Option<Plane> {
    if indices.len() < 3 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for &i in indices {
        centroid += points[i].coords();
    }
    centroid /= indices.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = points[i].coords() - centroid;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut min_i = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
            min_i = i;
        }
    }
    let mut n = eig.eigenvectors.column(min_i).into_owned();
    if n.norm() < 1e-12 {
        return None;
    }
    n.normalize_mut();
    Some(canonical_plane(n, -n.dot(&centroid)))
}

/// Orients the normal deterministically (positive z, then y, then x).
fn canonical_plane(n: Vector3<f64>, offset: f64) -> Plane {
    let flip = n.z < 0.0 || (n.z == 0.0 && (n.y < 0.0 || (n.y == 0.0 && n.x < 0.0)));
    if flip {
        Plane {
            normal: [-n.x, -n.y, -n.z],
            offset: -offset,
        }
    } else {
        Plane {
            normal: [n.x, n.y, n.z],
            offset,
        }
    }
}

/// RANSAC plane extraction with a fixed iteration count and seed. When the
/// best plane captures at least `min_inlier_fraction` of the cloud its
/// inliers are removed; otherwise the cloud passes through unchanged.
pub fn remove_plane(cloud: &PointCloud, inlier_tol: f64, min_inlier_fraction: f64) -> Result<PlaneRemoval> {
    if inlier_tol <= 0.0 || !inlier_tol.is_finite() {
        return Err(Error::validation("inlier_tol", "must be positive"));
    }
    let points = cloud.points();
    let n = points.len();
    let pass_through = |cloud: &PointCloud| PlaneRemoval {
        remainder: cloud.clone(),
        kept_indices: (0..n).collect(),
        plane: None,
    };
    if n < 3 {
        return Ok(pass_through(cloud));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RANSAC_SEED);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..RANSAC_ITERATIONS {
        let mut pick = [0usize; 3];
        pick[0] = rng.random_range(0..n);
        loop {
            pick[1] = rng.random_range(0..n);
            if pick[1] != pick[0] {
                break;
            }
        }
        loop {
            pick[2] = rng.random_range(0..n);
            if pick[2] != pick[0] && pick[2] != pick[1] {
                break;
            }
        }
        let a = points[pick[0]].coords();
        let b = points[pick[1]].coords();
        let c = points[pick[2]].coords();
        let normal = (b - a).cross(&(c - a));
        if normal.norm() < 1e-15 {
            continue;
        }
        let normal = normal.normalize();
        let plane = canonical_plane(normal, -normal.dot(&a));
        let inliers = points.iter().filter(|p| plane.distance(p) <= inlier_tol).count();
        if best.as_ref().is_none_or(|(bc, _)| inliers > *bc) {
            best = Some((inliers, plane));
        }
    }
    let Some((mut best_count, mut best_plane)) = best else {
        return Ok(pass_through(cloud));
    };
    // one least-squares refit over the consensus set, kept when not worse
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| best_plane.distance(&points[i]) <= inlier_tol).collect();
    if let Some(refit) = fit_plane_least_squares(points, &inlier_idx) {
        let refit_count = points.iter().filter(|p| refit.distance(p) <= inlier_tol).count();
        if refit_count >= best_count {
            best_count = refit_count;
            best_plane = refit;
        }
    }
    if (best_count as f64) < min_inlier_fraction * n as f64 {
        return Ok(pass_through(cloud));
    }
    let kept_indices: Vec<usize> = (0..n)
        .filter(|&i| best_plane.distance(&points[i]) > inlier_tol)
        .collect();
    let remainder = cloud.select(&kept_indices);
    Ok(PlaneRemoval {
        remainder,
        kept_indices,
        plane: Some(best_plane),
    })
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeping labels order-independent
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the epsilon-neighbor graph over `subset` points of
/// `parent` (segment indices refer to the parent). Components outside the
/// size bounds are dropped; survivors are ordered by descending size (ties by
/// smallest member index) and numbered in that order.
pub fn euclidean_cluster_subset(
    parent: &Arc<PointCloud>,
    subset: &[usize],
    params: &ClusterParams,
) -> Result<Vec<Segment>> {
    params.validate()?;
    if subset.is_empty() {
        return Ok(Vec::new());
    }
    let points: Vec<Point3> = subset.iter().map(|&i| parent.points()[i]).collect();
    let index = NnIndex::build(&points);
    let mut uf = UnionFind::new(points.len());
    for (i, p) in points.iter().enumerate() {
        for j in index.within_radius(p, params.tolerance) {
            uf.union(i, j);
        }
    }
    let mut components: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &original) in subset.iter().enumerate() {
        let root = uf.find(i);
        components.entry(root).or_default().push(original);
    }
    let mut clusters: Vec<Vec<usize>> = components
        .into_values()
        .filter(|c| c.len() >= params.min_size && c.len() <= params.max_size)
        .collect();
    clusters.sort_by_key(|c| (std::cmp::Reverse(c.len()), c[0]));
    clusters
        .into_iter()
        .enumerate()
        .map(|(id, indices)| Segment::from_indices(Arc::clone(parent), indices, id))
        .collect()
}

/// Clusters every point of `parent`.
pub fn euclidean_cluster(parent: &Arc<PointCloud>, params: &ClusterParams) -> Result<Vec<Segment>> {
    let all: Vec<usize> = (0..parent.len()).collect();
    euclidean_cluster_subset(parent, &all, params)
}

/// Keeps segments whose bounding box can hold an object. Sorted extents
/// compare against the sorted model extents: a segment whose largest extent
/// falls well below the model's is junk and is dropped; within
/// (1 + tolerance) per axis it is a single-object candidate; anything larger
/// survives as a flagged clump (several touching objects) as long as no
/// extent exceeds 2.5 x the model's largest.
pub fn gate_by_bounding_box(
    segments: Vec<Segment>,
    model_extents: [f64; 3],
    tolerance: f64,
) -> Vec<Segment> {
    let mut model = model_extents;
    model.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let model_max = model[2];
    segments
        .into_iter()
        .filter_map(|mut seg| {
            let mut ext = seg.aabb().extents();
            ext.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if ext[2] < (1.0 - tolerance) * model[2] {
                return None;
            }
            if (0..3).all(|i| ext[i] <= (1.0 + tolerance) * model[i]) {
                return Some(seg);
            }
            if ext.iter().all(|&e| e <= CLUMP_MAX_FACTOR * model_max) {
                seg.clump = true;
                return Some(seg);
            }
            None
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SegmentRepr {
    segment_id: usize,
    clump: bool,
    aabb_min: [f64; 3],
    aabb_max: [f64; 3],
    indices: Vec<usize>,
}

/// Serializes segments (ids, bounds, parent indices) alongside a parent PLY.
pub fn save_segments_json(path: &std::path::Path, segments: &[Segment]) -> Result<()> {
    let reprs: Vec<SegmentRepr> = segments
        .iter()
        .map(|s| SegmentRepr {
            segment_id: s.segment_id(),
            clump: s.is_clump(),
            aabb_min: s.aabb().min.into(),
            aabb_max: s.aabb().max.into(),
            indices: s.indices().to_vec(),
        })
        .collect();
    std::fs::write(path, serde_json::to_string(&reprs)?)?;
    Ok(())
}

/// Loads segments back over the given parent cloud.
pub fn load_segments_json(path: &std::path::Path, parent: &Arc<PointCloud>) -> Result<Vec<Segment>> {
    let reprs: Vec<SegmentRepr> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    reprs
        .into_iter()
        .map(|r| {
            let mut seg = Segment::from_indices(Arc::clone(parent), r.indices, r.segment_id)?;
            seg.clump = r.clump;
            Ok(seg)
        })
        .collect()
}
