//! Two-stage 6-DoF pose estimation.
//!
//! Offline, 42 partial views of the object model are rendered from the
//! vertices of a once-subdivided icosahedron and summarized by two global
//! descriptors: a viewpoint histogram over normals and shape relative to the
//! viewing direction, and a roll histogram over the angular coordinate about
//! the viewing axis. Online, each segment is matched coarsely against the
//! templates (histogram distance ranks the viewpoint, circular
//! cross-correlation recovers the camera roll), then each of the top
//! candidates is refined with point-to-point ICP; the result with the most
//! inlier correspondences wins.

mod detect;
mod icp;

pub use detect::{detect_all, detect_all_multi, detect_segment, detect_segment_multi, DetectParams};
pub use icp::{icp_refine, icp_refine_detailed, rigid_align, IcpOutcome};

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{
    basis_with_z, estimate_normals, Frame, Mesh, Point3, PointCloud, Ray, RigidTransform,
};
use crate::segment::Segment;
use crate::sim::ObjectModel;
use crate::Result;

/// Bins per viewpoint-histogram component; four components concatenate.
pub const VP_SUB_BINS: usize = 45;
/// Total viewpoint-histogram length.
pub const VP_BINS: usize = 4 * VP_SUB_BINS;
/// Bins of the roll histogram over [0, 2pi).
pub const ROLL_BINS: usize = 90;
/// Rays per side when rendering template views.
const TEMPLATE_GRID_DIVS: usize = 96;
/// A partial view with fewer points than this marks the model degenerate.
const MIN_TEMPLATE_POINTS: usize = 20;
/// Neighbors for on-demand normal estimation.
const NORMAL_K: usize = 10;

/// One precomputed partial view of the model.
#[derive(Debug, Clone)]
pub struct ViewTemplate {
    pub template_id: usize,
    /// Unit direction from the model toward the viewpoint, model frame.
    pub viewpoint_dir: Vector3<f64>,
    /// Visible surface from that viewpoint, model frame.
    pub partial_cloud: PointCloud,
    pub partial_centroid: Point3,
    pub vp_histogram: Vec<f64>,
    pub roll_histogram: Vec<f64>,
    /// Rotation placing the model so the viewpoint looks along -z.
    pub canonical_pose: RigidTransform,
}

/// A coarse template match for one segment.
#[derive(Debug, Clone)]
pub struct CoarseMatch {
    pub template_id: usize,
    pub histogram_distance: f64,
    /// In-plane rotation about the viewing axis, [0, 2pi).
    pub roll_angle: f64,
    /// Initial model-to-world pose for refinement.
    pub init_pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Convergence threshold on the pose change between iterations, meters.
    pub trans_eps: f64,
    pub max_correspondence_dist: f64,
    /// Inlier radius for the fitness and outlier counts.
    pub outlier_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iterations: 60,
            trans_eps: 1e-6,
            max_correspondence_dist: 0.01,
            outlier_dist: 0.005,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations", "must be positive"));
        }
        for (name, v) in [
            ("trans_eps", self.trans_eps),
            ("max_correspondence_dist", self.max_correspondence_dist),
            ("outlier_dist", self.outlier_dist),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fresh,
    Reused,
}

/// A detected object pose with its ICP quality numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub segment_id: usize,
    /// Model-to-world transform.
    pub pose: RigidTransform,
    /// Inlier correspondence count at `outlier_dist`.
    pub fitness: usize,
    /// Segment points with no model correspondence within `outlier_dist`.
    pub outliers: usize,
    pub rms_error: f64,
    pub provenance: Provenance,
}

/// The 42 template viewpoints: icosahedron vertices plus normalized edge
/// midpoints (12 + 30).
pub fn template_viewpoints() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = Vec::with_capacity(12);
    for s1 in [1.0, -1.0] {
        for s2 in [1.0, -1.0] {
            verts.push(Vector3::new(0.0, s1, s2 * phi).normalize());
            verts.push(Vector3::new(s1, s2 * phi, 0.0).normalize());
            verts.push(Vector3::new(s1 * phi, 0.0, s2).normalize());
        }
    }
    let mut dirs = verts.clone();
    // neighbors share the largest pairwise dot product (1/sqrt(5))
    for i in 0..verts.len() {
        for j in (i + 1)..verts.len() {
            let d = verts[i].dot(&verts[j]);
            if d > 0.3 && d < 0.6 {
                dirs.push((verts[i] + verts[j]).normalize());
            }
        }
    }
    debug_assert_eq!(dirs.len(), 42);
    dirs
}

/// Renders the model surface visible from direction `v` (orthographic rays
/// from far along `v`), in the model frame.
fn render_partial_view(mesh: &Mesh, v: &Vector3<f64>) -> PointCloud {
    let basis = basis_with_z(*v);
    let e1 = basis.column(0).into_owned();
    let e2 = basis.column(1).into_owned();
    let bounds = mesh.aabb();
    let center = bounds.center().coords();
    let radius = (bounds.max.coords() - bounds.min.coords()).norm() / 2.0;
    let pitch = (2.0 * radius) / TEMPLATE_GRID_DIVS as f64;
    let stand_off = 4.0 * radius + 0.1;
    let mut points = Vec::new();
    for iu in 0..=TEMPLATE_GRID_DIVS {
        for iw in 0..=TEMPLATE_GRID_DIVS {
            let u = -radius + iu as f64 * pitch;
            let w = -radius + iw as f64 * pitch;
            let origin = Point3::from_coords(center + e1 * u + e2 * w + v * stand_off);
            let ray = Ray { origin, dir: -v };
            if let Some(hit) = mesh.cast(&ray) {
                points.push(Point3::from_coords(origin.coords() - v * hit.t));
            }
        }
    }
    PointCloud::new(points, Frame::Model)
}

/// Concatenated four-part viewpoint histogram of a cloud seen from
/// `view_dir` (unit vector from the cloud toward the viewer): angle of each
/// normal to the view direction, angle of each normal to its centroid ray,
/// normalized centroid distance, and angle of each centroid ray to the view
/// direction. L1-normalized. Normals are estimated on demand when missing.
pub fn compute_vp_histogram(cloud: &PointCloud, view_dir: &Vector3<f64>) -> Result<Vec<f64>> {
    if cloud.len() < MIN_TEMPLATE_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_TEMPLATE_POINTS,
            found: cloud.len(),
        });
    }
    let owned;
    let cloud = if cloud.normals().is_some() {
        cloud
    } else {
        let centroid = cloud.centroid().expect("non-empty");
        let toward = Point3::from_coords(centroid.coords() + view_dir);
        owned = estimate_normals(cloud, NORMAL_K, &toward)?;
        &owned
    };
    let normals = cloud.normals().expect("normals present");
    let centroid = cloud.centroid().expect("non-empty").coords();
    // scale by twice the mean centroid distance: robust to the odd rim
    // point, unlike a max-based normalizer
    let r_mean = cloud
        .points()
        .iter()
        .map(|p| (p.coords() - centroid).norm())
        .sum::<f64>()
        / cloud.len() as f64;
    let r_scale = 2.0 * r_mean;

    let mut hist = vec![0.0f64; VP_BINS];
    // soft binning: each sample splits linearly between its two nearest
    // bins, which damps discretization noise between congruent views
    let deposit = |hist: &mut [f64], sub: usize, coord: f64| {
        let x = (coord * VP_SUB_BINS as f64 - 0.5).clamp(0.0, (VP_SUB_BINS - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(VP_SUB_BINS - 1);
        let frac = x - lo as f64;
        hist[sub * VP_SUB_BINS + lo] += 1.0 - frac;
        hist[sub * VP_SUB_BINS + hi] += frac;
    };
    let angle_between = |a: &Vector3<f64>, b: &Vector3<f64>| a.dot(b).clamp(-1.0, 1.0).acos();
    for (p, n) in cloud.points().iter().zip(normals) {
        let rel = p.coords() - centroid;
        let r = rel.norm();
        let d = if r < 1e-12 { *view_dir } else { rel / r };
        deposit(&mut hist, 0, angle_between(n, view_dir) / std::f64::consts::PI);
        deposit(&mut hist, 1, angle_between(n, &d) / std::f64::consts::PI);
        let r_coord = if r_scale < 1e-12 { 0.0 } else { (r / r_scale).min(1.0) };
        deposit(&mut hist, 2, r_coord);
        deposit(&mut hist, 3, angle_between(&d, view_dir) / std::f64::consts::PI);
    }
    // light smoothing per sub-histogram (reflected edges) stabilizes the
    // descriptor against sampling jitter at partial-view rims
    const KERNEL: [f64; 5] = [0.1, 0.2, 0.4, 0.2, 0.1];
    let mut smoothed = vec![0.0f64; VP_BINS];
    for sub in 0..4 {
        for b in 0..VP_SUB_BINS {
            let mut acc = 0.0;
            for (k, w) in KERNEL.iter().enumerate() {
                let off = b as isize + k as isize - 2;
                let idx = off.rem_euclid(2 * VP_SUB_BINS as isize) as usize;
                let idx = if idx >= VP_SUB_BINS { 2 * VP_SUB_BINS - 1 - idx } else { idx };
                acc += w * hist[sub * VP_SUB_BINS + idx];
            }
            smoothed[sub * VP_SUB_BINS + b] = acc;
        }
    }
    let total: f64 = smoothed.iter().sum();
    for h in &mut smoothed {
        *h /= total;
    }
    Ok(smoothed)
}

/// 90-bin histogram of the angular coordinate of each point about the view
/// axis, measured about the projected centroid; L1-normalized. The in-plane
/// reference axes follow [`basis_with_z`].
pub fn compute_roll_histogram(cloud: &PointCloud, view_dir: &Vector3<f64>) -> Result<Vec<f64>> {
    if cloud.len() < MIN_TEMPLATE_POINTS {
        return Err(Error::TooFewPoints {
            needed: MIN_TEMPLATE_POINTS,
            found: cloud.len(),
        });
    }
    let basis = basis_with_z(*view_dir);
    let e1 = basis.column(0).into_owned();
    let e2 = basis.column(1).into_owned();
    let centroid = cloud.centroid().expect("non-empty").coords();
    let mut hist = vec![0.0f64; ROLL_BINS];
    for p in cloud.points() {
        let rel = p.coords() - centroid;
        let (u, w) = (rel.dot(&e1), rel.dot(&e2));
        let theta = if u.abs() < 1e-15 && w.abs() < 1e-15 {
            0.0
        } else {
            let t = w.atan2(u);
            if t < 0.0 {
                t + std::f64::consts::TAU
            } else {
                t
            }
        };
        let bin = (((theta / std::f64::consts::TAU) * ROLL_BINS as f64) as usize).min(ROLL_BINS - 1);
        hist[bin] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    for h in &mut hist {
        *h /= total;
    }
    Ok(hist)
}

/// Shift (in bins) maximizing the circular cross-correlation of `target`
/// against `reference`; ties resolve to the smallest shift.
pub fn roll_shift(target: &[f64], reference: &[f64]) -> usize {
    debug_assert_eq!(target.len(), reference.len());
    let n = reference.len();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for shift in 0..n {
        let mut score = 0.0;
        for b in 0..n {
            score += target[b] * reference[(b + n - shift) % n];
        }
        if score > best.0 {
            best = (score, shift);
        }
    }
    best.1
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Builds the 42 view templates for a model.
pub fn generate_view_templates(model: &ObjectModel) -> Result<Vec<ViewTemplate>> {
    let mut templates = Vec::with_capacity(42);
    for (template_id, v) in template_viewpoints().into_iter().enumerate() {
        let partial_cloud = render_partial_view(model.mesh(), &v);
        if partial_cloud.len() < MIN_TEMPLATE_POINTS {
            return Err(Error::DegenerateModel {
                view: template_id,
                points: partial_cloud.len(),
            });
        }
        let centroid = partial_cloud.centroid().expect("non-empty");
        let toward = Point3::from_coords(centroid.coords() + v);
        let with_normals = estimate_normals(&partial_cloud, NORMAL_K, &toward)?;
        let vp_histogram = compute_vp_histogram(&with_normals, &v)?;
        let roll_histogram = compute_roll_histogram(&partial_cloud, &v)?;
        let canonical_rot = basis_with_z(v).transpose();
        let canonical_pose = RigidTransform::from_matrix(canonical_rot, Vector3::zeros())
            .expect("basis transpose is a rotation");
        templates.push(ViewTemplate {
            template_id,
            viewpoint_dir: v,
            partial_cloud: with_normals,
            partial_centroid: centroid,
            vp_histogram,
            roll_histogram,
            canonical_pose,
        });
    }
    Ok(templates)
}

/// Rotation about +z by `angle`.
fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Assembles the model-to-world initial pose for a template matched to a
/// segment viewed from `view_dir_world`, with in-plane rotation `roll`:
/// centroids align and the template viewpoint maps onto the world viewing
/// direction.
fn assemble_init_pose(
    template: &ViewTemplate,
    roll: f64,
    view_dir_world: &Vector3<f64>,
    segment_centroid: &Point3,
) -> RigidTransform {
    let b_world = basis_with_z(*view_dir_world);
    let b_model = basis_with_z(template.viewpoint_dir);
    let rotation = b_world * rot_z(roll) * b_model.transpose();
    let pose = RigidTransform::from_matrix(rotation, Vector3::zeros())
        .expect("product of rotations is a rotation");
    let translation = segment_centroid.coords() - pose.apply(&template.partial_centroid).coords();
    RigidTransform::new(pose.rotation(), translation)
}

/// Ranks templates against a segment and recovers the camera roll for the
/// top `k`, returned in ascending histogram-distance order.
pub fn coarse_match(
    segment: &Segment,
    templates: &[ViewTemplate],
    sensor_pose: &RigidTransform,
    k: usize,
) -> Result<Vec<CoarseMatch>> {
    let seg_cloud = segment.cloud();
    let sensor_origin = Point3::from_coords(sensor_pose.translation());
    let view_dir = (sensor_origin.coords() - segment.centroid().coords()).normalize();
    let with_normals = estimate_normals(&seg_cloud, NORMAL_K, &sensor_origin)?;
    let vp = compute_vp_histogram(&with_normals, &view_dir)?;
    let roll_hist = compute_roll_histogram(&seg_cloud, &view_dir)?;

    let mut ranked: Vec<(f64, usize)> = templates
        .iter()
        .map(|t| (l1_distance(&vp, &t.vp_histogram), t.template_id))
        .collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let centroid = segment.centroid();
    Ok(ranked
        .into_iter()
        .take(k.max(1))
        .map(|(dist, template_id)| {
            let template = &templates[template_id];
            let shift = roll_shift(&roll_hist, &template.roll_histogram);
            let roll = shift as f64 * std::f64::consts::TAU / ROLL_BINS as f64;
            CoarseMatch {
                template_id,
                histogram_distance: dist,
                roll_angle: roll,
                init_pose: assemble_init_pose(template, roll, &view_dir, &centroid),
            }
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    template_id: usize,
    viewpoint_dir: [f64; 3],
    partial_centroid: [f64; 3],
    vp_histogram: Vec<f64>,
    roll_histogram: Vec<f64>,
    canonical_pose: RigidTransform,
}

#[derive(Serialize, Deserialize)]
struct TemplateManifest {
    model_id: String,
    model_hash: String,
    templates: Vec<TemplateRepr>,
}

fn template_ply_name(id: usize) -> String {
    format!("view_{id:02}.ply")
}

/// Persists templates: one PLY per partial view plus `manifest.json` keyed by
/// the model content hash.
pub fn save_templates(dir: &Path, model: &ObjectModel, templates: &[ViewTemplate]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = TemplateManifest {
        model_id: model.model_id().to_string(),
        model_hash: format!("{:016x}", model.content_hash()),
        templates: templates
            .iter()
            .map(|t| TemplateRepr {
                template_id: t.template_id,
                viewpoint_dir: [t.viewpoint_dir.x, t.viewpoint_dir.y, t.viewpoint_dir.z],
                partial_centroid: t.partial_centroid.into(),
                vp_histogram: t.vp_histogram.clone(),
                roll_histogram: t.roll_histogram.clone(),
                canonical_pose: t.canonical_pose,
            })
            .collect(),
    };
    for t in templates {
        crate::io::write_ply_cloud(
            &dir.join(template_ply_name(t.template_id)),
            &t.partial_cloud,
            None,
        )?;
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads templates if the manifest matches the model's content hash; `None`
/// means absent or stale.
pub fn load_templates(dir: &Path, model: &ObjectModel) -> Result<Option<Vec<ViewTemplate>>> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Ok(None);
    }
    let manifest: TemplateManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    if manifest.model_hash != format!("{:016x}", model.content_hash()) {
        return Ok(None);
    }
    let mut templates = Vec::with_capacity(manifest.templates.len());
    for repr in manifest.templates {
        let cloud = crate::io::read_ply_cloud(&dir.join(template_ply_name(repr.template_id)))?
            .with_frame(Frame::Model);
        templates.push(ViewTemplate {
            template_id: repr.template_id,
            viewpoint_dir: Vector3::from(repr.viewpoint_dir),
            partial_cloud: cloud,
            partial_centroid: repr.partial_centroid.into(),
            vp_histogram: repr.vp_histogram,
            roll_histogram: repr.roll_histogram,
            canonical_pose: repr.canonical_pose,
        });
    }
    Ok(Some(templates))
}

/// Loads a cached template set or generates and caches a fresh one; stale
/// caches rebuild.
pub fn load_or_generate_templates(dir: &Path, model: &ObjectModel) -> Result<Vec<ViewTemplate>> {
    if let Some(t) = load_templates(dir, model)? {
        return Ok(t);
    }
    let templates = generate_view_templates(model)?;
    save_templates(dir, model, &templates)?;
    Ok(templates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::apply_transform;
    use crate::sim::{cuboid_mesh, icosphere_mesh, l_prism_mesh};
    use std::sync::Arc;

    fn block_model() -> ObjectModel {
        ObjectModel::from_mesh(cuboid_mesh(0.06, 0.03, 0.02), "block", 2000).unwrap()
    }

    #[test]
    fn exactly_42_viewpoints_and_templates() {
        let dirs = template_viewpoints();
        assert_eq!(dirs.len(), 42);
        for v in &dirs {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        // pairwise distinct
        for i in 0..dirs.len() {
            for j in (i + 1)..dirs.len() {
                assert!((dirs[i] - dirs[j]).norm() > 1e-6);
            }
        }
        let templates = generate_view_templates(&block_model()).unwrap();
        assert_eq!(templates.len(), 42);
    }

    #[test]
    fn sphere_templates_are_nearly_identical() {
        let sphere = ObjectModel::from_mesh(icosphere_mesh(0.03, 3), "sphere", 2000).unwrap();
        let templates = generate_view_templates(&sphere).unwrap();
        for i in 0..templates.len() {
            for j in (i + 1)..templates.len() {
                let d = l1_distance(&templates[i].vp_histogram, &templates[j].vp_histogram);
                assert!(d < 0.05, "templates {i},{j} differ by {d}");
            }
        }
    }

    #[test]
    fn block_top_view_is_planar() {
        let model = block_model();
        let templates = generate_view_templates(&model).unwrap();
        // the viewpoint closest to +z sees (mostly) the top face
        let top = templates
            .iter()
            .max_by(|a, b| a.viewpoint_dir.z.partial_cmp(&b.viewpoint_dir.z).unwrap())
            .unwrap();
        // for the icosahedron vertex set no direction is exactly +z; take the
        // synthetic straight-down view instead
        let straight_down = render_partial_view(model.mesh(), &Vector3::z());
        let max_z = straight_down.points().iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
        let min_z = straight_down.points().iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert!(max_z - min_z < 1e-6, "top view should be a single plane");
        assert!(top.partial_cloud.len() >= MIN_TEMPLATE_POINTS);
    }

    #[test]
    fn vp_histogram_normalizes_and_is_deterministic() {
        let model = block_model();
        let v = Vector3::new(0.3, -0.2, 0.93).normalize();
        let cloud = render_partial_view(model.mesh(), &v);
        let h1 = compute_vp_histogram(&cloud, &v).unwrap();
        let h2 = compute_vp_histogram(&cloud, &v).unwrap();
        assert_eq!(h1, h2);
        let sum: f64 = h1.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(h1.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn parallel_normals_concentrate_first_subhistogram() {
        // flat grid with normals straight up, viewed from straight up
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0));
            }
        }
        let n = pts.len();
        let cloud = PointCloud::with_normals(pts, vec![Vector3::z(); n], Frame::Model).unwrap();
        let h = compute_vp_histogram(&cloud, &Vector3::z()).unwrap();
        // the (a) component's full quarter of the mass sits at angle zero,
        // spread only by the smoothing kernel's two-bin reach
        let head: f64 = h[..3].iter().sum();
        assert!((head - 0.25).abs() < 1e-9, "mass near bin 0: {head}");
        assert!(h[0] > h[1] && h[1] > h[2]);
        assert!(h[3..VP_SUB_BINS].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vp_histogram_is_rotation_invariant() {
        let model = block_model();
        let v = Vector3::new(0.1, 0.4, 0.9).normalize();
        let cloud = render_partial_view(model.mesh(), &v);
        let centroid = cloud.centroid().unwrap();
        let toward = Point3::from_coords(centroid.coords() + v);
        let with_normals = estimate_normals(&cloud, NORMAL_K, &toward).unwrap();
        let h0 = compute_vp_histogram(&with_normals, &v).unwrap();

        let rot = RigidTransform::from_axis_angle(
            Vector3::new(0.7, -0.3, 0.5),
            1.234,
            Vector3::new(0.04, -0.02, 0.01),
        );
        let rotated = apply_transform(&with_normals, &rot);
        let v_rot = rot.apply_vector(&v);
        let h1 = compute_vp_histogram(&rotated, &v_rot).unwrap();
        for (a, b) in h0.iter().zip(&h1) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn roll_histogram_shifts_under_rotation() {
        // points at bin centers so nothing straddles a bin edge
        let v = Vector3::z();
        let bin = std::f64::consts::TAU / ROLL_BINS as f64;
        let mut pts = Vec::new();
        for (k, r) in [(0usize, 0.02), (7, 0.03), (23, 0.05), (55, 0.04), (70, 0.025)] {
            let theta = (k as f64 + 0.5) * bin;
            for depth in 0..5 {
                pts.push(Point3::new(
                    r * theta.cos(),
                    r * theta.sin(),
                    depth as f64 * 0.001,
                ));
            }
        }
        // the centroid must not move when the cloud spins about the axis, so
        // balance it onto the axis by mirroring every point
        let mirrored: Vec<Point3> = pts.iter().map(|p| Point3::new(-p.x, -p.y, p.z)).collect();
        pts.extend(mirrored);
        let cloud = PointCloud::new(pts, Frame::Model);
        let h0 = compute_roll_histogram(&cloud, &v).unwrap();
        let about = RigidTransform::from_axis_angle(v, bin, Vector3::zeros());
        let rotated = apply_transform(&cloud, &about);
        let h1 = compute_roll_histogram(&rotated, &v).unwrap();
        for b in 0..ROLL_BINS {
            let got = h1[(b + 1) % ROLL_BINS];
            assert!(
                (h0[b] - got).abs() < 1e-9,
                "bin {b}: {} vs {got}",
                h0[b]
            );
        }
    }

    #[test]
    fn symmetric_cloud_has_flat_roll_histogram() {
        // ring of points about the view axis
        let mut pts = Vec::new();
        for k in 0..360 {
            let t = k as f64 * std::f64::consts::TAU / 360.0;
            pts.push(Point3::new(0.05 * t.cos(), 0.05 * t.sin(), 0.0));
        }
        let cloud = PointCloud::new(pts, Frame::Model);
        let h = compute_roll_histogram(&cloud, &Vector3::z()).unwrap();
        let max = h.iter().cloned().fold(f64::MIN, f64::max);
        let min = h.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 0.02, "spread {}", max - min);
    }

    #[test]
    fn crosscorrelation_recovers_constructed_rotation() {
        // needs a view without rotational symmetry about the axis, else the
        // correlation legitimately ties at the symmetric shift
        let model = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let v = Vector3::new(0.2, 0.3, 0.95).normalize();
        let cloud = render_partial_view(model.mesh(), &v);
        let h0 = compute_roll_histogram(&cloud, &v).unwrap();
        for target_shift in [3usize, 17, 40, 77] {
            let angle = target_shift as f64 * std::f64::consts::TAU / ROLL_BINS as f64;
            let centroid = cloud.centroid().unwrap().coords();
            let q = nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(v), angle);
            let about = RigidTransform::new(q, centroid - q * centroid);
            let rotated = apply_transform(&cloud, &about);
            let h1 = compute_roll_histogram(&rotated, &v).unwrap();
            let got = roll_shift(&h1, &h0);
            let diff = (got as i64 - target_shift as i64).rem_euclid(ROLL_BINS as i64);
            let diff = diff.min(ROLL_BINS as i64 - diff);
            assert!(diff <= 1, "shift {target_shift} recovered as {got}");
        }
    }

    fn segment_from_cloud(cloud: PointCloud) -> Segment {
        let n = cloud.len();
        Segment::from_indices(Arc::new(cloud), (0..n).collect(), 0).unwrap()
    }

    #[test]
    fn template_self_match_ranks_itself_first() {
        // strict self-match needs an object with no rotational symmetry; a
        // symmetric object legitimately ties congruent views
        let model = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let templates = generate_view_templates(&model).unwrap();
        let mut failures = Vec::new();
        for t in &templates {
            let seg = segment_from_cloud(t.partial_cloud.clone().with_frame(Frame::World));
            // sensor far along the viewpoint direction
            let sensor = crate::view::look_at_pose(
                &Point3::from_coords(t.partial_centroid.coords() + t.viewpoint_dir * 0.5),
                &t.partial_centroid,
            );
            let matches = coarse_match(&seg, &templates, &sensor, 1).unwrap();
            if matches[0].template_id != t.template_id {
                failures.push((t.template_id, matches[0].template_id));
            }
        }
        assert!(
            failures.is_empty(),
            "templates not self-matched: {failures:?}"
        );
    }

    #[test]
    fn symmetric_block_self_match_ties_at_zero_distance() {
        // for the cuboid the winner may be a symmetry-equivalent view, but
        // only at (numerically) zero histogram distance
        let model = block_model();
        let templates = generate_view_templates(&model).unwrap();
        for t in templates.iter().step_by(5) {
            let seg = segment_from_cloud(t.partial_cloud.clone().with_frame(Frame::World));
            let sensor = crate::view::look_at_pose(
                &Point3::from_coords(t.partial_centroid.coords() + t.viewpoint_dir * 0.5),
                &t.partial_centroid,
            );
            let matches = coarse_match(&seg, &templates, &sensor, 1).unwrap();
            let own = l1_distance(&t.vp_histogram, &t.vp_histogram);
            assert_eq!(own, 0.0);
            assert!(
                matches[0].histogram_distance < 1e-9,
                "winner for template {} at distance {}",
                t.template_id,
                matches[0].histogram_distance
            );
        }
    }

    #[test]
    fn coarse_match_k_controls_result_count() {
        let model = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let templates = generate_view_templates(&model).unwrap();
        let t7 = &templates[7];
        let seg = segment_from_cloud(t7.partial_cloud.clone().with_frame(Frame::World));
        let sensor = crate::view::look_at_pose(
            &Point3::from_coords(t7.partial_centroid.coords() + t7.viewpoint_dir * 0.5),
            &t7.partial_centroid,
        );
        let matches = coarse_match(&seg, &templates, &sensor, 1).unwrap();
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].template_id, 7);
        let matches = coarse_match(&seg, &templates, &sensor, 5).unwrap();
        assert_eq!(matches.len(), 5);
        assert!(matches.windows(2).all(|w| w[0].histogram_distance <= w[1].histogram_distance));
    }

    #[test]
    fn roll_recovered_for_rotated_segment() {
        let model = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let templates = generate_view_templates(&model).unwrap();
        let t = &templates[0];
        let v = t.viewpoint_dir;
        let roll_truth = 40f64.to_radians();
        // spin the partial view about the viewing axis, keep the viewpoint
        let centroid = t.partial_centroid.coords();
        let q = nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(v), roll_truth);
        let spin = RigidTransform::new(q, centroid - q * centroid);
        let seg_cloud = apply_transform(&t.partial_cloud, &spin).with_frame(Frame::World);
        let seg = segment_from_cloud(seg_cloud);
        let sensor = crate::view::look_at_pose(
            &Point3::from_coords(centroid + v * 0.5),
            &t.partial_centroid,
        );
        let matches = coarse_match(&seg, &templates, &sensor, 3).unwrap();
        let own = matches.iter().find(|m| m.template_id == 0).expect("own template in top-3");
        let bin = std::f64::consts::TAU / ROLL_BINS as f64;
        let err = (own.roll_angle - roll_truth).abs();
        let err = err.min(std::f64::consts::TAU - err);
        assert!(err <= bin + 1e-9, "roll {} vs {}", own.roll_angle, roll_truth);
    }

    #[test]
    fn init_pose_places_template_on_segment() {
        // the assembled coarse pose must land the template cloud on the
        // segment: same rotation about the view axis, centroids aligned
        let model = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let templates = generate_view_templates(&model).unwrap();
        let t = &templates[11];
        let truth = RigidTransform::from_axis_angle(
            Vector3::new(0.3, 0.8, 0.1),
            0.9,
            Vector3::new(0.2, 0.1, 0.05),
        );
        let seg_cloud = apply_transform(&t.partial_cloud, &truth).with_frame(Frame::World);
        let seg = segment_from_cloud(seg_cloud);
        // sensor where this template's viewpoint says it should be
        let view_dir_world = truth.apply_vector(&t.viewpoint_dir);
        let sensor = crate::view::look_at_pose(
            &Point3::from_coords(seg.centroid().coords() + view_dir_world * 0.6),
            &seg.centroid(),
        );
        let matches = coarse_match(&seg, &templates, &sensor, 3).unwrap();
        let own = matches.iter().find(|m| m.template_id == 11).expect("own template in top-3");
        // apply the init pose to the template cloud; it should approximate
        // the segment up to one roll bin of slack
        let moved = apply_transform(&t.partial_cloud, &own.init_pose);
        let seg_pts = seg.cloud();
        let idx = crate::geom::build_nn_index(&seg_pts).unwrap();
        let mean_dist: f64 = moved
            .points()
            .iter()
            .map(|p| idx.nearest(p).1)
            .sum::<f64>()
            / moved.len() as f64;
        // one roll bin at the block's radius is about 2.4 mm
        assert!(mean_dist < 0.004, "template lands {mean_dist} m from segment");
    }

    #[test]
    fn template_cache_roundtrip_and_staleness() {
        let model = block_model();
        let templates = generate_view_templates(&model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_templates(dir.path(), &model, &templates).unwrap();
        let loaded = load_templates(dir.path(), &model).unwrap().expect("fresh cache");
        assert_eq!(loaded.len(), 42);
        for (a, b) in templates.iter().zip(&loaded) {
            assert_eq!(a.template_id, b.template_id);
            assert_eq!(a.vp_histogram, b.vp_histogram);
            assert_eq!(a.partial_cloud.points(), b.partial_cloud.points());
        }
        // a different model invalidates the cache
        let other = ObjectModel::from_mesh(cuboid_mesh(0.05, 0.03, 0.02), "other", 1000).unwrap();
        assert!(load_templates(dir.path(), &other).unwrap().is_none());
        let regenerated = load_or_generate_templates(dir.path(), &other).unwrap();
        assert_eq!(regenerated.len(), 42);
        assert!(load_templates(dir.path(), &other).unwrap().is_some());
    }

    #[test]
    fn lprism_templates_generate() {
        let prism = ObjectModel::from_mesh(l_prism_mesh(0.06, 0.04, 0.02), "lprism", 2000).unwrap();
        let templates = generate_view_templates(&prism).unwrap();
        assert_eq!(templates.len(), 42);
    }
}
