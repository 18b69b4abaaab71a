//! Python bindings: the main geometry types plus one-call wrappers around
//! pile simulation, view planning, detection, merging, and the full series.
//!
//! Build with `cargo build -p binpick-py --release`, then import the
//! produced `libbinpick.so` as `binpick.so` (see `python/smoke_test.py`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use binpick_core::error::Error;
use binpick_core::geom;
use binpick_core::pipeline;
use binpick_core::pose;
use binpick_core::sim;
use binpick_core::view;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Validation { .. } | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct RigidTransform {
    inner: geom::RigidTransform,
}

#[pymethods]
impl RigidTransform {
    #[staticmethod]
    fn identity() -> Self {
        RigidTransform {
            inner: geom::RigidTransform::identity(),
        }
    }

    /// From a unit quaternion (w, x, y, z) and translation (x, y, z).
    #[staticmethod]
    fn from_quaternion(q: (f64, f64, f64, f64), t: (f64, f64, f64)) -> Self {
        let quat = nalgebra_quat(q);
        RigidTransform {
            inner: geom::RigidTransform::new(quat, [t.0, t.1, t.2].into()),
        }
    }

    fn quaternion(&self) -> (f64, f64, f64, f64) {
        let rot = self.inner.rotation();
        let q = rot.quaternion();
        (q.w, q.i, q.j, q.k)
    }

    fn translation(&self) -> (f64, f64, f64) {
        let t = self.inner.translation();
        (t.x, t.y, t.z)
    }

    fn apply(&self, p: (f64, f64, f64)) -> (f64, f64, f64) {
        let q = self.inner.apply(&geom::Point3::new(p.0, p.1, p.2));
        (q.x, q.y, q.z)
    }

    fn inverse(&self) -> Self {
        RigidTransform {
            inner: self.inner.inverse(),
        }
    }

    fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            inner: self.inner.compose(&other.inner),
        }
    }

    fn __repr__(&self) -> String {
        let (w, x, y, z) = self.quaternion();
        let (tx, ty, tz) = self.translation();
        format!("RigidTransform(q=({w:.4}, {x:.4}, {y:.4}, {z:.4}), t=({tx:.4}, {ty:.4}, {tz:.4}))")
    }
}

fn nalgebra_quat(q: (f64, f64, f64, f64)) -> nalgebra::UnitQuaternion<f64> {
    nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q.0, q.1, q.2, q.3))
}

// nalgebra is not a direct dependency of this crate; reach it through the
// core crate's public types
use binpick_core::nalgebra;

#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct PointCloud {
    inner: geom::PointCloud,
}

#[pymethods]
impl PointCloud {
    #[staticmethod]
    fn from_points(points: Vec<(f64, f64, f64)>) -> Self {
        PointCloud {
            inner: geom::PointCloud::new(
                points
                    .into_iter()
                    .map(|(x, y, z)| geom::Point3::new(x, y, z))
                    .collect(),
                geom::Frame::World,
            ),
        }
    }

    #[staticmethod]
    fn load_ply(path: PathBuf) -> PyResult<Self> {
        Ok(PointCloud {
            inner: binpick_core::io::read_ply_cloud(&path).map_err(to_py_err)?,
        })
    }

    fn save_ply(&self, path: PathBuf) -> PyResult<()> {
        binpick_core::io::write_ply_cloud(&path, &self.inner, None).map_err(to_py_err)
    }

    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .points()
            .iter()
            .map(|p| (p.x, p.y, p.z))
            .collect()
    }

    fn voxel_downsample(&self, cell: f64) -> PyResult<Self> {
        Ok(PointCloud {
            inner: geom::voxel_downsample(&self.inner, cell).map_err(to_py_err)?,
        })
    }

    fn transformed(&self, t: &RigidTransform) -> Self {
        PointCloud {
            inner: geom::apply_transform(&self.inner, &t.inner),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.inner.len())
    }
}

#[pyclass]
struct ObjectModel {
    inner: Arc<sim::ObjectModel>,
}

#[pymethods]
impl ObjectModel {
    #[staticmethod]
    #[pyo3(signature = (path, model_id = "model".to_string()))]
    fn from_mesh_file(path: PathBuf, model_id: String) -> PyResult<Self> {
        Ok(ObjectModel {
            inner: Arc::new(sim::ObjectModel::from_mesh_file(&path, model_id).map_err(to_py_err)?),
        })
    }

    /// Axis-aligned block of the given extents, centered at the origin.
    #[staticmethod]
    fn block(dx: f64, dy: f64, dz: f64) -> PyResult<Self> {
        Ok(ObjectModel {
            inner: Arc::new(
                sim::ObjectModel::from_mesh(
                    sim::cuboid_mesh(dx, dy, dz),
                    "block",
                    sim::DEFAULT_MODEL_SAMPLES,
                )
                .map_err(to_py_err)?,
            ),
        })
    }

    fn sample_cloud(&self) -> PointCloud {
        PointCloud {
            inner: self.inner.sample_cloud().clone(),
        }
    }

    fn max_extent(&self) -> f64 {
        self.inner.max_extent()
    }

    fn __repr__(&self) -> String {
        format!(
            "ObjectModel({:?}, {} surface samples)",
            self.inner.model_id(),
            self.inner.sample_cloud().len()
        )
    }
}

#[pyclass]
struct Scene {
    inner: sim::Scene,
}

#[pymethods]
impl Scene {
    fn instance_ids(&self) -> Vec<usize> {
        self.inner.instances().iter().map(|i| i.id).collect()
    }

    fn instance_pose(&self, id: usize) -> PyResult<RigidTransform> {
        self.inner
            .instance(id)
            .map(|i| RigidTransform { inner: i.pose })
            .ok_or_else(|| PyValueError::new_err(format!("unknown instance {id}")))
    }

    /// Removes `target` and perturbs neighbors within `contact_radius`.
    #[pyo3(signature = (target, seed, contact_radius = 0.02, max_translation = 0.01, max_rotation = 0.17453292519943295))]
    fn apply_pick(
        &self,
        target: usize,
        seed: u64,
        contact_radius: f64,
        max_translation: f64,
        max_rotation: f64,
    ) -> PyResult<Scene> {
        let d = sim::PickDisturbance {
            contact_radius,
            max_translation,
            max_rotation,
        };
        Ok(Scene {
            inner: sim::apply_pick(&self.inner, target, &d, seed).map_err(to_py_err)?,
        })
    }

    /// Renders a depth capture from `sensor_pose` (world frame points).
    #[pyo3(signature = (sensor_pose, seed = 0, width = 320, height = 240, noise_sigma = 0.0))]
    fn render_depth(
        &self,
        sensor_pose: &RigidTransform,
        seed: u64,
        width: usize,
        height: usize,
        noise_sigma: f64,
    ) -> PointCloud {
        let intr = sim::SensorIntrinsics {
            width,
            height,
            noise_sigma,
            ..Default::default()
        };
        PointCloud {
            inner: sim::render_depth(&self.inner, &sensor_pose.inner, &intr, seed),
        }
    }

    fn __repr__(&self) -> String {
        format!("Scene({} instances)", self.inner.instances().len())
    }
}

/// Drops `count` model instances into a box; deterministic in `seed`.
#[pyfunction]
fn generate_pile(
    model: &ObjectModel,
    count: usize,
    box_min: (f64, f64, f64),
    box_max: (f64, f64, f64),
    seed: u64,
) -> PyResult<Scene> {
    let bin = geom::Aabb::new(
        geom::Point3::new(box_min.0, box_min.1, box_min.2),
        geom::Point3::new(box_max.0, box_max.1, box_max.2),
    );
    Ok(Scene {
        inner: sim::generate_pile(&model.inner, count, bin, seed).map_err(to_py_err)?,
    })
}

/// First-trial sensor pose: the feasible candidate seeing the most of the
/// box bottom.
#[pyfunction]
fn plan_first_view(box_min: (f64, f64, f64), box_max: (f64, f64, f64)) -> PyResult<RigidTransform> {
    let bin = geom::Aabb::new(
        geom::Point3::new(box_min.0, box_min.1, box_min.2),
        geom::Point3::new(box_max.0, box_max.1, box_max.2),
    );
    let params = view::ViewPlanParams::default();
    let cands = view::candidate_poses(&bin, &params).map_err(to_py_err)?;
    let feasible =
        view::filter_feasible(&cands, &view::DefaultFeasibility::for_box(bin)).map_err(to_py_err)?;
    let frustum = view::Frustum::from_intrinsics(&sim::SensorIntrinsics::default());
    let selected = view::select_pose(&feasible, None, &bin, &frustum).map_err(to_py_err)?;
    Ok(RigidTransform { inner: selected.pose })
}

fn estimate_to_dict<'py>(
    py: Python<'py>,
    e: &pose::PoseEstimate,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("segment_id", e.segment_id)?;
    let rot = e.pose.rotation();
    let q = rot.quaternion();
    d.set_item("quaternion", (q.w, q.i, q.j, q.k))?;
    let t = e.pose.translation();
    d.set_item("translation", (t.x, t.y, t.z))?;
    d.set_item("fitness", e.fitness)?;
    d.set_item("outliers", e.outliers)?;
    d.set_item("rms_error", e.rms_error)?;
    d.set_item(
        "provenance",
        match e.provenance {
            pose::Provenance::Fresh => "fresh",
            pose::Provenance::Reused => "reused",
        },
    )?;
    Ok(d)
}

/// Segments a capture and detects object poses (first-trial path with
/// default parameters). Returns a list of estimate dicts.
#[pyfunction]
#[pyo3(signature = (cloud, model, sensor_pose, threads = 0))]
fn detect(
    py: Python<'_>,
    cloud: &PointCloud,
    model: &ObjectModel,
    sensor_pose: &RigidTransform,
    threads: usize,
) -> PyResult<Vec<Py<PyDict>>> {
    let templates = pose::generate_view_templates(&model.inner).map_err(to_py_err)?;
    let bounds = geom::compute_aabb(&cloud.inner).map_err(to_py_err)?;
    let ctx = pipeline::TrialContext {
        model: &model.inner,
        templates: &templates,
        sensor_pose: sensor_pose.inner,
        detect: pose::DetectParams::default(),
        cluster: Default::default(),
        gate_tolerance: 0.3,
        downsample_cell: 0.004,
        plane_tol: 0.004,
        plane_min_fraction: 0.2,
        // a bare cloud has no wall geometry to crop against
        crop_margin: 0.0,
        bin: bounds.inflate(0.01),
        threads,
    };
    let outcome = pipeline::iterate_trial(None, &cloud.inner, &Default::default(), &ctx)
        .map_err(to_py_err)?;
    outcome
        .state
        .estimates
        .iter()
        .map(|e| Ok(estimate_to_dict(py, e)?.unbind()))
        .collect()
}

/// Merges previous segments (lists of indices into `prev_cloud`) into the
/// current capture; returns the merged cloud and the vote report as JSON.
#[pyfunction]
#[pyo3(signature = (prev_cloud, prev_segments, current, min_distance = 0.005, ratio_threshold = 0.5))]
fn merge_clouds(
    prev_cloud: &PointCloud,
    prev_segments: Vec<Vec<usize>>,
    current: &PointCloud,
    min_distance: f64,
    ratio_threshold: f64,
) -> PyResult<(PointCloud, String)> {
    let parent = Arc::new(prev_cloud.inner.clone());
    let segments: Vec<binpick_core::segment::Segment> = prev_segments
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            binpick_core::segment::Segment::from_indices(Arc::clone(&parent), idx, id)
                .map_err(to_py_err)
        })
        .collect::<PyResult<_>>()?;
    let params = binpick_core::merge::MergeParams {
        min_distance,
        ratio_threshold,
        ..Default::default()
    };
    let (merged, report) =
        binpick_core::merge::merge_clouds(&segments, &current.inner, &params).map_err(to_py_err)?;
    let report_json = serde_json::to_string(&report)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((PointCloud { inner: merged.cloud }, report_json))
}

/// Renders and caches the 42 view templates; returns the template count.
#[pyfunction]
fn make_templates(model: &ObjectModel, out_dir: PathBuf) -> PyResult<usize> {
    let templates =
        pose::load_or_generate_templates(&out_dir, &model.inner).map_err(to_py_err)?;
    Ok(templates.len())
}

/// Runs the full trial series from a config file; returns the metrics JSON.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir = None))]
fn run_series(config_path: PathBuf, out_dir: Option<PathBuf>) -> PyResult<String> {
    let config = pipeline::load_config(Path::new(&config_path)).map_err(to_py_err)?;
    let out = out_dir.unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let (metrics, _) = pipeline::run_series_with_records(&config, &out).map_err(to_py_err)?;
    serde_json::to_string_pretty(&metrics).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn binpick(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RigidTransform>()?;
    m.add_class::<PointCloud>()?;
    m.add_class::<ObjectModel>()?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(generate_pile, m)?)?;
    m.add_function(wrap_pyfunction!(plan_first_view, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(merge_clouds, m)?)?;
    m.add_function(wrap_pyfunction!(make_templates, m)?)?;
    m.add_function(wrap_pyfunction!(run_series, m)?)?;
    Ok(())
}
