//! Depth rendering by ray casting.
//!
//! One ray per pixel through a pinhole model; the first intersection with an
//! instance mesh or a box interior surface becomes a world-frame point.
//! Points come back in row-major pixel order, so output is deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{Aabb, Frame, Mesh, Point3, PointCloud, Ray, RigidTransform, Triangle};

use super::{Scene, SensorIntrinsics};

/// Label for points on box surfaces rather than an instance.
pub const BACKGROUND: i64 = -1;

/// A rendered cloud with the instance id that produced each point.
#[derive(Debug, Clone)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<i64>,
}

/// Interior surfaces of the open-top box: floor plus four walls.
pub fn box_interior_mesh(bin: &Aabb) -> Mesh {
    let (lo, hi) = (bin.min, bin.max);
    let corner = |x: f64, y: f64, z: f64| Point3::new(x, y, z);
    let mut tris = Vec::with_capacity(10);
    let mut quad = |a: Point3, b: Point3, c: Point3, d: Point3| {
        tris.push(Triangle::new(a, b, c));
        tris.push(Triangle::new(a, c, d));
    };
    // floor
    quad(
        corner(lo.x, lo.y, lo.z),
        corner(hi.x, lo.y, lo.z),
        corner(hi.x, hi.y, lo.z),
        corner(lo.x, hi.y, lo.z),
    );
    // walls
    quad(
        corner(lo.x, lo.y, lo.z),
        corner(hi.x, lo.y, lo.z),
        corner(hi.x, lo.y, hi.z),
        corner(lo.x, lo.y, hi.z),
    );
    quad(
        corner(lo.x, hi.y, lo.z),
        corner(hi.x, hi.y, lo.z),
        corner(hi.x, hi.y, hi.z),
        corner(lo.x, hi.y, hi.z),
    );
    quad(
        corner(lo.x, lo.y, lo.z),
        corner(lo.x, hi.y, lo.z),
        corner(lo.x, hi.y, hi.z),
        corner(lo.x, lo.y, hi.z),
    );
    quad(
        corner(hi.x, lo.y, lo.z),
        corner(hi.x, hi.y, lo.z),
        corner(hi.x, hi.y, hi.z),
        corner(hi.x, lo.y, hi.z),
    );
    Mesh::new(tris)
}

/// Renders a depth capture and reports which instance each point came from.
pub fn render_depth_labeled(
    scene: &Scene,
    sensor: &RigidTransform,
    intr: &SensorIntrinsics,
    seed: u64,
) -> LabeledCloud {
    let background = box_interior_mesh(&scene.bin());
    let instance_meshes: Vec<(i64, Mesh)> = scene
        .instances()
        .iter()
        .map(|inst| (inst.id as i64, scene.model().mesh().transformed(&inst.pose)))
        .collect();

    let origin = Point3::from_coords(sensor.translation());
    let tan_h = (intr.horizontal_fov / 2.0).tan();
    let tan_v = (intr.vertical_fov / 2.0).tan();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let sx = (2.0 * (u as f64 + 0.5) / intr.width as f64 - 1.0) * tan_h;
            let sy = (2.0 * (v as f64 + 0.5) / intr.height as f64 - 1.0) * tan_v;
            let dir_sensor = nalgebra::Vector3::new(sx, sy, 1.0).normalize();
            let ray = Ray {
                origin,
                dir: sensor.apply_vector(&dir_sensor),
            };
            let mut best: Option<(f64, i64)> = None;
            if let Some(hit) = background.cast(&ray) {
                best = Some((hit.t, BACKGROUND));
            }
            for (label, mesh) in &instance_meshes {
                if let Some(hit) = mesh.cast(&ray) {
                    if best.is_none_or(|(t, _)| hit.t < t) {
                        best = Some((hit.t, *label));
                    }
                }
            }
            if let Some((t, label)) = best {
                if t >= intr.min_range && t <= intr.max_range {
                    let t = if intr.noise_sigma > 0.0 {
                        t + intr.noise_sigma * super::standard_normal(&mut rng)
                    } else {
                        t
                    };
                    points.push(Point3::from_coords(origin.coords() + ray.dir * t));
                    labels.push(label);
                }
            }
        }
    }
    LabeledCloud {
        cloud: PointCloud::new(points, Frame::World),
        labels,
    }
}

/// Renders a depth capture from `sensor`; empty output is valid (nothing in
/// range).
pub fn render_depth(
    scene: &Scene,
    sensor: &RigidTransform,
    intr: &SensorIntrinsics,
    seed: u64,
) -> PointCloud {
    render_depth_labeled(scene, sensor, intr, seed).cloud
}
