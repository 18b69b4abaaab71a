//! Triangle meshes and ray casting.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, Frame, Point3, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub a: Point3,
    pub b: Point3,
    pub c: Point3,
}

impl Triangle {
    pub fn new(a: Point3, b: Point3, c: Point3) -> Self {
        Triangle { a, b, c }
    }

    pub fn area(&self) -> f64 {
        let ab = self.b.coords() - self.a.coords();
        let ac = self.c.coords() - self.a.coords();
        0.5 * ab.cross(&ac).norm()
    }

    pub fn normal(&self) -> Vector3<f64> {
        let ab = self.b.coords() - self.a.coords();
        let ac = self.c.coords() - self.a.coords();
        let n = ab.cross(&ac);
        if n.norm() < 1e-18 {
            Vector3::z()
        } else {
            n.normalize()
        }
    }

    /// Distance from `p` to the closest point of the triangle.
    pub fn distance_to_point(&self, p: &Point3) -> f64 {
        // project onto the plane, clamp into the triangle via edge tests
        let a = self.a.coords();
        let b = self.b.coords();
        let c = self.c.coords();
        let q = p.coords();
        let ab = b - a;
        let ac = c - a;
        let aq = q - a;

        let d1 = ab.dot(&aq);
        let d2 = ac.dot(&aq);
        if d1 <= 0.0 && d2 <= 0.0 {
            return (q - a).norm();
        }
        let bq = q - b;
        let d3 = ab.dot(&bq);
        let d4 = ac.dot(&bq);
        if d3 >= 0.0 && d4 <= d3 {
            return (q - b).norm();
        }
        let vc = d1 * d4 - d3 * d2;
        if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            let v = d1 / (d1 - d3);
            return (q - (a + ab * v)).norm();
        }
        let cq = q - c;
        let d5 = ab.dot(&cq);
        let d6 = ac.dot(&cq);
        if d6 >= 0.0 && d5 <= d6 {
            return (q - c).norm();
        }
        let vb = d5 * d2 - d1 * d6;
        if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            let w = d2 / (d2 - d6);
            return (q - (a + ac * w)).norm();
        }
        let va = d3 * d6 - d5 * d4;
        if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
            return (q - (b + (c - b) * w)).norm();
        }
        let n = ab.cross(&ac);
        ((q - a).dot(&n) / n.norm()).abs()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3,
    pub dir: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Distance along the ray direction.
    pub t: f64,
    pub triangle: usize,
}

/// A triangle list with cached bounds.
#[derive(Debug, Clone)]
pub struct Mesh {
    triangles: Vec<Triangle>,
    aabb: Aabb,
}

impl Mesh {
    pub fn new(triangles: Vec<Triangle>) -> Self {
        assert!(!triangles.is_empty(), "mesh needs at least one triangle");
        let mut aabb = Aabb::new(triangles[0].a, triangles[0].a);
        for t in &triangles {
            for p in [t.a, t.b, t.c] {
                aabb = aabb.union(&Aabb::new(p, p));
            }
        }
        Mesh { triangles, aabb }
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Mesh {
        Mesh::new(
            self.triangles
                .iter()
                .map(|tri| Triangle::new(t.apply(&tri.a), t.apply(&tri.b), t.apply(&tri.c)))
                .collect(),
        )
    }

    /// First intersection of `ray` with the mesh (double-sided triangles).
    pub fn cast(&self, ray: &Ray) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (i, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = ray_triangle(ray, tri) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(RayHit { t, triangle: i });
                }
            }
        }
        best
    }

    /// Area-weighted random surface sampling; deterministic in `seed`.
    pub fn sample_surface(&self, count: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.triangles.iter().map(Triangle::area).collect();
        let total: f64 = areas.iter().sum();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative.push(acc);
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.random_range(0.0..total);
            let ti = cumulative.partition_point(|&c| c < r).min(areas.len() - 1);
            let tri = &self.triangles[ti];
            let mut u: f64 = rng.random_range(0.0..1.0);
            let mut v: f64 = rng.random_range(0.0..1.0);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = tri.a.coords()
                + (tri.b.coords() - tri.a.coords()) * u
                + (tri.c.coords() - tri.a.coords()) * v;
            points.push(Point3::from_coords(p));
        }
        PointCloud::new(points, Frame::Model)
    }

    /// Distance from `p` to the nearest triangle.
    pub fn distance_to_point(&self, p: &Point3) -> f64 {
        self.triangles
            .iter()
            .map(|t| t.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Möller–Trumbore without backface culling; returns the ray parameter.
fn ray_triangle(ray: &Ray, tri: &Triangle) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = tri.b.coords() - tri.a.coords();
    let e2 = tri.c.coords() - tri.a.coords();
    let pvec = ray.dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = ray.origin.coords() - tri.a.coords();
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = ray.dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t > EPS {
        Some(t)
    } else {
        None
    }
}
