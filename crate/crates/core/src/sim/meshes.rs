//! Procedural test meshes.

use crate::geom::{Mesh, Point3, Triangle};

/// Axis-aligned cuboid of the given extents, centered at the origin.
pub fn cuboid_mesh(dx: f64, dy: f64, dz: f64) -> Mesh {
    let hx = dx / 2.0;
    let hy = dy / 2.0;
    let hz = dz / 2.0;
    let v = |sx: f64, sy: f64, sz: f64| Point3::new(sx * hx, sy * hy, sz * hz);
    // 8 corners
    let c = [
        v(-1.0, -1.0, -1.0),
        v(1.0, -1.0, -1.0),
        v(1.0, 1.0, -1.0),
        v(-1.0, 1.0, -1.0),
        v(-1.0, -1.0, 1.0),
        v(1.0, -1.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(-1.0, 1.0, 1.0),
    ];
    let quads = [
        [0, 3, 2, 1], // bottom
        [4, 5, 6, 7], // top
        [0, 1, 5, 4], // -y
        [2, 3, 7, 6], // +y
        [1, 2, 6, 5], // +x
        [3, 0, 4, 7], // -x
    ];
    let mut tris = Vec::with_capacity(12);
    for q in quads {
        tris.push(Triangle::new(c[q[0]], c[q[1]], c[q[2]]));
        tris.push(Triangle::new(c[q[0]], c[q[2]], c[q[3]]));
    }
    Mesh::new(tris)
}

/// Icosphere of the given radius, centered at the origin.
pub fn icosphere_mesh(radius: f64, subdivisions: usize) -> Mesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut verts {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v[0] /= n;
        v[1] /= n;
        v[2] /= n;
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = [
                    (verts[a][0] + verts[b][0]) / 2.0,
                    (verts[a][1] + verts[b][1]) / 2.0,
                    (verts[a][2] + verts[b][2]) / 2.0,
                ];
                let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                verts.len() - 1
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let tris = faces
        .iter()
        .map(|f| {
            let p = |i: usize| {
                Point3::new(
                    verts[i][0] * radius,
                    verts[i][1] * radius,
                    verts[i][2] * radius,
                )
            };
            Triangle::new(p(f[0]), p(f[1]), p(f[2]))
        })
        .collect();
    Mesh::new(tris)
}

/// An L-shaped prism with no nontrivial rotational symmetry; handy as an
/// asymmetric test object. Footprint `dx` by `dy`, height `dz`, with one
/// quadrant removed.
pub fn l_prism_mesh(dx: f64, dy: f64, dz: f64) -> Mesh {
    // L outline in the xy plane (counter-clockwise), centered-ish at origin
    let x0 = -dx / 2.0;
    let x1 = dx / 2.0;
    let y0 = -dy / 2.0;
    let y1 = dy / 2.0;
    let xm = x0 + 0.6 * dx;
    let ym = y0 + 0.55 * dy;
    let outline = [
        (x0, y0),
        (x1, y0),
        (x1, ym),
        (xm, ym),
        (xm, y1),
        (x0, y1),
    ];
    let z0 = -dz / 2.0;
    let z1 = dz / 2.0;
    let bot: Vec<Point3> = outline.iter().map(|&(x, y)| Point3::new(x, y, z0)).collect();
    let top: Vec<Point3> = outline.iter().map(|&(x, y)| Point3::new(x, y, z1)).collect();
    let mut tris = Vec::new();
    // caps: fan from vertex 0 works because the L is star-shaped from corner 0
    for k in 1..outline.len() - 1 {
        tris.push(Triangle::new(bot[0], bot[k + 1], bot[k]));
        tris.push(Triangle::new(top[0], top[k], top[k + 1]));
    }
    // sides
    for k in 0..outline.len() {
        let j = (k + 1) % outline.len();
        tris.push(Triangle::new(bot[k], bot[j], top[j]));
        tris.push(Triangle::new(bot[k], top[j], top[k]));
    }
    Mesh::new(tris)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_has_expected_bounds_and_area() {
        let m = cuboid_mesh(0.06, 0.03, 0.02);
        let b = m.aabb();
        assert_eq!(b.extents(), [0.06, 0.03, 0.02]);
        let want = 2.0 * (0.06 * 0.03 + 0.06 * 0.02 + 0.03 * 0.02);
        assert!((m.surface_area() - want).abs() < 1e-12);
    }

    #[test]
    fn icosphere_vertices_on_sphere() {
        let m = icosphere_mesh(0.05, 2);
        for t in m.triangles() {
            for p in [t.a, t.b, t.c] {
                assert!((p.coords().norm() - 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l_prism_is_watertight_enough_for_rays() {
        use crate::geom::Ray;
        let m = l_prism_mesh(0.06, 0.04, 0.02);
        // straight down through the solid part hits top then exits bottom
        let ray = Ray {
            origin: Point3::new(-0.02, -0.01, 1.0),
            dir: nalgebra::Vector3::new(0.0, 0.0, -1.0),
        };
        let hit = m.cast(&ray).expect("ray through the prism must hit");
        assert!((hit.t - (1.0 - 0.01)).abs() < 1e-9);
        // through the removed quadrant: passes the footprint without hitting caps
        let ray = Ray {
            origin: Point3::new(0.025, 0.018, 1.0),
            dir: nalgebra::Vector3::new(0.0, 0.0, -1.0),
        };
        assert!(m.cast(&ray).is_none());
    }
}
