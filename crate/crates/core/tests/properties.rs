//! Property tests over the geometric foundation.

use binpick_core::geom::{
    apply_transform, build_nn_index, compute_aabb, voxel_downsample, Frame, Point3, PointCloud,
    RigidTransform,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn arb_point() -> impl Strategy<Value = Point3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(arb_point(), 1..max)
        .prop_map(|points| PointCloud::new(points, Frame::World))
}

fn arb_transform() -> impl Strategy<Value = RigidTransform> {
    (
        -1.0..1.0f64,
        -1.0..1.0f64,
        -1.0..1.0f64,
        0.0..std::f64::consts::PI,
        -0.5..0.5f64,
        -0.5..0.5f64,
        -0.5..0.5f64,
    )
        .prop_filter("axis must not vanish", |(ax, ay, az, ..)| {
            (ax * ax + ay * ay + az * az).sqrt() > 1e-3
        })
        .prop_map(|(ax, ay, az, angle, tx, ty, tz)| {
            RigidTransform::from_axis_angle(
                Vector3::new(ax, ay, az),
                angle,
                Vector3::new(tx, ty, tz),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nearest_matches_linear_scan(cloud in arb_cloud(400), query in arb_point()) {
        let index = build_nn_index(&cloud).unwrap();
        let (gi, gd) = index.nearest(&query);
        let mut want = (0usize, f64::INFINITY);
        for (i, p) in cloud.points().iter().enumerate() {
            let d = p.distance(&query);
            if d < want.1 {
                want = (i, d);
            }
        }
        prop_assert_eq!(gi, want.0);
        prop_assert_eq!(gd, want.1);
    }

    #[test]
    fn transforms_preserve_pairwise_distances(cloud in arb_cloud(60), t in arb_transform()) {
        let moved = apply_transform(&cloud, &t);
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let before = cloud.points()[i].distance(&cloud.points()[j]);
                let after = moved.points()[i].distance(&moved.points()[j]);
                prop_assert!((before - after).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transformed_aabb_contains_all_transformed_points(cloud in arb_cloud(80), t in arb_transform()) {
        let moved = apply_transform(&cloud, &t);
        let bounds = compute_aabb(&moved).unwrap().inflate(1e-12);
        for p in cloud.points() {
            prop_assert!(bounds.contains(&t.apply(p)));
        }
    }

    #[test]
    fn voxel_downsample_is_idempotent(cloud in arb_cloud(300), cell in 0.01..0.5f64) {
        let once = voxel_downsample(&cloud, cell).unwrap();
        let twice = voxel_downsample(&once, cell).unwrap();
        prop_assert_eq!(once, twice);
    }
}
