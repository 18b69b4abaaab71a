//! Point-to-point ICP with closed-form least-squares alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::Error;
use crate::geom::{build_nn_index, Point3, PointCloud, RigidTransform};
use crate::Result;

use super::{IcpParams, PoseEstimate, Provenance};

/// Least-squares rigid transform taking `source[i]` onto `target[i]`
/// (Kabsch, via SVD of the cross-covariance).
pub fn rigid_align(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() || source.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: source.len().min(target.len()),
        });
    }
    let n = source.len() as f64;
    let mut cs = Vector3::zeros();
    let mut ct = Vector3::zeros();
    for (s, t) in source.iter().zip(target) {
        cs += s.coords();
        ct += t.coords();
    }
    cs /= n;
    ct /= n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords() - cs) * (t.coords() - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = v * fix * u.transpose();
    let translation = ct - rotation * cs;
    RigidTransform::from_matrix(rotation, translation)
}

/// Per-iteration diagnostics from a refinement run.
#[derive(Debug, Clone)]
pub struct IcpOutcome {
    pub estimate: PoseEstimate,
    /// RMS correspondence distance at the start of each iteration.
    pub rms_history: Vec<f64>,
    pub iterations: usize,
}

/// Refines `init` (model to world) so the model explains the segment cloud.
/// Correspondences are exact nearest neighbors within
/// `max_correspondence_dist`; each iteration re-solves the full closed-form
/// alignment. Fitness and outliers count segment points with and without a
/// model correspondence inside `outlier_dist` at the final pose.
pub fn icp_refine_detailed(
    segment_cloud: &PointCloud,
    model_cloud: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpOutcome> {
    params.validate()?;
    if segment_cloud.is_empty() || model_cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let model_index = build_nn_index(model_cloud)?;
    let model_radius = {
        let c = model_cloud.centroid().expect("non-empty").coords();
        model_cloud
            .points()
            .iter()
            .map(|p| (p.coords() - c).norm())
            .fold(0.0f64, f64::max)
    };

    let mut pose = *init;
    let mut rms_history = Vec::new();
    let mut iterations = 0;
    for iter in 0..params.max_iterations {
        let inv = pose.inverse();
        let mut pairs_model: Vec<Point3> = Vec::new();
        let mut pairs_world: Vec<Point3> = Vec::new();
        let mut sq_sum = 0.0;
        for s in segment_cloud.points() {
            let q = inv.apply(s);
            let (j, d) = model_index.nearest(&q);
            if d <= params.max_correspondence_dist {
                pairs_model.push(*model_index.point(j));
                pairs_world.push(*s);
                sq_sum += d * d;
            }
        }
        if pairs_model.len() < 3 {
            if iter == 0 {
                return Err(Error::NoCorrespondences {
                    max_dist: params.max_correspondence_dist,
                });
            }
            break;
        }
        rms_history.push((sq_sum / pairs_model.len() as f64).sqrt());
        let new_pose = rigid_align(&pairs_model, &pairs_world)?;
        let delta = new_pose.translation_distance_to(&pose)
            + new_pose.rotation_angle_to(&pose) * model_radius;
        pose = new_pose;
        iterations = iter + 1;
        if delta < params.trans_eps {
            break;
        }
    }

    // final quality at the refined pose
    let inv = pose.inverse();
    let mut fitness = 0usize;
    let mut inlier_sq = 0.0;
    for s in segment_cloud.points() {
        let q = inv.apply(s);
        let (_, d) = model_index.nearest(&q);
        if d <= params.outlier_dist {
            fitness += 1;
            inlier_sq += d * d;
        }
    }
    let outliers = segment_cloud.len() - fitness;
    let rms_error = if fitness > 0 {
        (inlier_sq / fitness as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(IcpOutcome {
        estimate: PoseEstimate {
            segment_id: 0,
            pose,
            fitness,
            outliers,
            rms_error,
            provenance: Provenance::Fresh,
        },
        rms_history,
        iterations,
    })
}

/// [`icp_refine_detailed`] without the diagnostics.
pub fn icp_refine(
    segment_cloud: &PointCloud,
    model_cloud: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<PoseEstimate> {
    Ok(icp_refine_detailed(segment_cloud, model_cloud, init, params)?.estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, Frame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-0.03..0.03),
                        rng.random_range(-0.015..0.015),
                        rng.random_range(-0.01..0.01),
                    )
                })
                .collect(),
            Frame::Model,
        )
    }

    #[test]
    fn alignment_reproduces_known_transform_exactly() {
        let source = random_cloud(40, 1);
        let t = RigidTransform::from_axis_angle(
            Vector3::new(0.3, -0.7, 1.1),
            0.8,
            Vector3::new(0.02, -0.01, 0.015),
        );
        let target = apply_transform(&source, &t);
        let got = rigid_align(source.points(), target.points()).unwrap();
        assert!(got.rotation_angle_to(&t) < 1e-9);
        assert!(got.translation_distance_to(&t) < 1e-9);
    }

    #[test]
    fn alignment_rejects_degenerate_input() {
        let a = [Point3::new(0.0, 0.0, 0.0)];
        let b = [Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            rigid_align(&a, &b),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let model = random_cloud(300, 2);
        let out = icp_refine_detailed(&model, &model, &RigidTransform::identity(), &IcpParams::default())
            .unwrap();
        assert!(out.estimate.pose.rotation_angle_to(&RigidTransform::identity()) < 1e-9);
        assert!(out.estimate.pose.translation().norm() < 1e-9);
        assert_eq!(out.estimate.outliers, 0);
        assert!(out.estimate.rms_error < 1e-9);
    }

    #[test]
    fn recovers_small_known_transform() {
        let model = random_cloud(500, 3);
        let truth = RigidTransform::from_axis_angle(
            Vector3::new(0.2, 1.0, -0.3),
            10f64.to_radians(),
            Vector3::new(0.003, -0.002, 0.004),
        );
        let segment = apply_transform(&model, &truth).with_frame(Frame::World);
        let out = icp_refine(&segment, &model, &RigidTransform::identity(), &IcpParams::default())
            .unwrap();
        let rot_err = out.pose.rotation_angle_to(&truth).to_degrees();
        let trans_err = out.pose.translation_distance_to(&truth);
        assert!(rot_err < 0.5, "rotation error {rot_err} deg");
        assert!(trans_err < 5e-4, "translation error {trans_err} m");
    }

    #[test]
    fn hopeless_init_reports_no_correspondences() {
        let model = random_cloud(100, 4);
        let far = RigidTransform::new(
            nalgebra::UnitQuaternion::identity(),
            Vector3::new(10.0, 0.0, 0.0),
        );
        let segment = apply_transform(&model, &far).with_frame(Frame::World);
        assert!(matches!(
            icp_refine(&segment, &model, &RigidTransform::identity(), &IcpParams::default()),
            Err(Error::NoCorrespondences { .. })
        ));
    }

    #[test]
    fn rms_history_is_non_increasing_on_clean_data() {
        let model = random_cloud(400, 5);
        let truth = RigidTransform::from_axis_angle(
            Vector3::new(-0.5, 0.4, 0.9),
            8f64.to_radians(),
            Vector3::new(0.004, 0.001, -0.003),
        );
        let segment = apply_transform(&model, &truth).with_frame(Frame::World);
        let params = IcpParams {
            max_correspondence_dist: 0.05,
            ..Default::default()
        };
        let out = icp_refine_detailed(&segment, &model, &RigidTransform::identity(), &params).unwrap();
        for w in out.rms_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "rms increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn fitness_plus_outliers_is_segment_size() {
        let model = random_cloud(350, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // half the segment is junk far from the model
        let mut pts: Vec<Point3> = model.points()[..200].to_vec();
        for _ in 0..150 {
            pts.push(Point3::new(
                rng.random_range(0.2..0.3),
                rng.random_range(0.2..0.3),
                rng.random_range(0.2..0.3),
            ));
        }
        let segment = PointCloud::new(pts, Frame::World);
        let out = icp_refine(&segment, &model, &RigidTransform::identity(), &IcpParams::default())
            .unwrap();
        assert_eq!(out.fitness + out.outliers, segment.len());
        assert!(out.fitness >= 200);
    }
}
