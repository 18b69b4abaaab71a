//! Geometric foundation: points, clouds, rigid transforms, boxes, and exact
//! nearest-neighbor search. All lengths are meters.

mod mesh;
mod nn;

pub use mesh::{Mesh, Ray, RayHit, Triangle};
pub use nn::NnIndex;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::Error;
use crate::Result;

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    World,
    Sensor,
    Model,
}

/// A 3D point. Coordinates must be finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        debug_assert!(x.is_finite() && y.is_finite() && z.is_finite());
        Point3 { x, y, z }
    }

    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

/// An ordered point set with optional unit normals. Immutable after
/// construction; the universal currency between pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vector3<f64>>>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        debug_assert!(points.iter().all(Point3::is_finite));
        PointCloud {
            points,
            normals: None,
            frame,
        }
    }

    /// Attaches normals; count must match and each must be unit length.
    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vector3<f64>>, frame: Frame) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::validation(
                "normals",
                format!("{} normals for {} points", normals.len(), points.len()),
            ));
        }
        for n in &normals {
            if (n.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::validation("normals", "normal is not unit length"));
            }
        }
        Ok(PointCloud {
            points,
            normals: Some(normals),
            frame,
        })
    }

    pub fn empty(frame: Frame) -> Self {
        PointCloud::new(Vec::new(), frame)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points, relabeled frame.
    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p.coords();
        }
        Some(Point3::from_coords(sum / self.points.len() as f64))
    }

    /// Subset by indices; normals follow when present.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|ns| indices.iter().map(|&i| ns[i]).collect());
        PointCloud {
            points,
            normals,
            frame: self.frame,
        }
    }
}

/// A rigid motion of SE(3): rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// Unit quaternion as [w, x, y, z].
    quaternion: [f64; 4],
    translation: [f64; 3],
}

impl From<TransformRepr> for RigidTransform {
    fn from(r: TransformRepr) -> Self {
        let q = Quaternion::new(r.quaternion[0], r.quaternion[1], r.quaternion[2], r.quaternion[3]);
        RigidTransform {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
        }
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformRepr {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle),
            translation,
        }
    }

    /// Builds from a rotation matrix; must be orthonormal with determinant +1
    /// within 1e-9.
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rt_r = rotation.transpose() * rotation;
        if (rt_r - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(Error::validation("rotation", "matrix is not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::validation("rotation", "determinant is not +1"));
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(rotation);
        Ok(RigidTransform {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation,
        })
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_coords(self.rotation * p.coords() + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }

    /// self ∘ other: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle between two transforms, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Axis-aligned bounding box; `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Aabb { min, max }
    }

    pub fn extents(&self) -> [f64; 3] {
        [
            self.max.x - self.min.x,
            self.max.y - self.min.y,
            self.max.z - self.min.z,
        ]
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && self.max.x >= other.min.x
            && self.min.y <= other.max.y
            && self.max.y >= other.min.y
            && self.min.z <= other.max.z
            && self.max.z >= other.min.z
    }

    pub fn inflate(&self, by: f64) -> Aabb {
        Aabb {
            min: Point3::new(self.min.x - by, self.min.y - by, self.min.z - by),
            max: Point3::new(self.max.x + by, self.max.y + by, self.max.z + by),
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: Point3::new(
                self.min.x.min(other.min.x),
                self.min.y.min(other.min.y),
                self.min.z.min(other.min.z),
            ),
            max: Point3::new(
                self.max.x.max(other.max.x),
                self.max.y.max(other.max.y),
                self.max.z.max(other.max.z),
            ),
        }
    }
}

/// Right-handed orthonormal basis whose third column is `z` (unit). The
/// first column is the projection of world +x onto the plane normal to `z`,
/// falling back to world +y when that degenerates; all view-frame and
/// camera-roll conventions in the crate share this rule.
pub fn basis_with_z(z: Vector3<f64>) -> Matrix3<f64> {
    let mut xref = Vector3::x() - z * z.x;
    if xref.norm() < 1e-9 {
        xref = Vector3::y() - z * z.y;
    }
    let x = xref.normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Builds an exact nearest-neighbor index over `cloud`.
pub fn build_nn_index(cloud: &PointCloud) -> Result<NnIndex> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(NnIndex::build(cloud.points()))
}

/// Maps every point by `p -> R p + t`; normals rotate, the frame label is
/// unchanged (the caller relabels when the motion crosses frames).
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    let points = cloud.points.iter().map(|p| t.apply(p)).collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect());
    PointCloud {
        points,
        normals,
        frame: cloud.frame,
    }
}

/// Componentwise extrema of a non-empty cloud.
pub fn compute_aabb(cloud: &PointCloud) -> Result<Aabb> {
    let first = cloud.points.first().ok_or(Error::EmptyCloud)?;
    let mut min = *first;
    let mut max = *first;
    for p in &cloud.points[1..] {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        min.z = min.z.min(p.z);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
        max.z = max.z.max(p.z);
    }
    Ok(Aabb { min, max })
}

/// One centroid per occupied voxel. Voxels are anchored at the origin so the
/// operation is idempotent at a fixed cell size; output is ordered by voxel
/// key, not input order. Normals are dropped.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if cell <= 0.0 || !cell.is_finite() {
        return Err(Error::NonPositiveCell(cell));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        );
        let entry = voxels.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p.coords();
        entry.1 += 1;
    }
    let points = voxels
        .values()
        .map(|(sum, n)| Point3::from_coords(sum / *n as f64))
        .collect();
    Ok(PointCloud::new(points, cloud.frame))
}

/// Per-point normals from a k-nearest-neighbor plane fit, oriented toward
/// `toward` (typically the sensor origin).
pub fn estimate_normals(cloud: &PointCloud, k: usize, toward: &Point3) -> Result<PointCloud> {
    if cloud.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: cloud.len(),
        });
    }
    let index = NnIndex::build(cloud.points());
    let k = k.min(cloud.len());
    let mut normals = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let neighbors = index.k_nearest(p, k);
        let mut centroid = Vector3::zeros();
        for &(i, _) in &neighbors {
            centroid += cloud.points[i].coords();
        }
        centroid /= neighbors.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(i, _) in &neighbors {
            let d = cloud.points[i].coords() - centroid;
            cov += d * d.transpose();
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        // smallest eigenvalue's eigenvector is the plane normal
        let mut min_i = 0;
        for i in 1..3 {
            if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
                min_i = i;
            }
        }
        let mut n = eig.eigenvectors.column(min_i).into_owned();
        if n.norm() < 1e-12 {
            n = Vector3::z();
        } else {
            n.normalize_mut();
        }
        if n.dot(&(toward.coords() - p.coords())) < 0.0 {
            n = -n;
        }
        normals.push(n);
    }
    PointCloud::with_normals(cloud.points.clone(), normals, cloud.frame)
}
