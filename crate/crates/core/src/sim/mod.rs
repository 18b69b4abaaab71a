//! Synthetic ground truth: random piles of a known object in a box, depth
//! rendering by ray casting, and the disturbance caused by a picking trial.

mod meshes;
mod pile;
mod render;

pub use meshes::{cuboid_mesh, icosphere_mesh, l_prism_mesh};
pub use pile::{apply_pick, generate_pile};
pub use render::{render_depth, render_depth_labeled, LabeledCloud};

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geom::{compute_aabb, Aabb, Mesh, PointCloud, RigidTransform};
use crate::io;
use crate::Result;

/// Fixed seed for surface sampling so a mesh always yields the same model
/// cloud.
const MODEL_SAMPLE_SEED: u64 = 0x5eed_0001;
const DETECTION_SAMPLE_SEED: u64 = 0x5eed_0002;

/// Default surface sample count for object models.
pub const DEFAULT_MODEL_SAMPLES: usize = 2000;

/// Denser sampling used as the ICP reference surface; a finer cloud lowers
/// the correspondence-distance floor so residuals can separate close poses.
pub const DETECTION_SAMPLES: usize = 8000;

/// An object to pick: mesh plus a dense surface sampling, both in the model
/// frame.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    mesh: Mesh,
    sample_cloud: PointCloud,
    detection_cloud: PointCloud,
    model_id: String,
}

impl ObjectModel {
    /// Samples `sample_count` surface points (at least 500).
    pub fn from_mesh(mesh: Mesh, model_id: impl Into<String>, sample_count: usize) -> Result<Self> {
        if sample_count < 500 {
            return Err(Error::validation(
                "sample_count",
                format!("need at least 500 surface samples, got {sample_count}"),
            ));
        }
        let sample_cloud = mesh.sample_surface(sample_count, MODEL_SAMPLE_SEED);
        let detection_cloud =
            mesh.sample_surface(sample_count.max(DETECTION_SAMPLES), DETECTION_SAMPLE_SEED);
        Ok(ObjectModel {
            mesh,
            sample_cloud,
            detection_cloud,
            model_id: model_id.into(),
        })
    }

    pub fn from_mesh_file(path: &Path, model_id: impl Into<String>) -> Result<Self> {
        let mesh = io::load_mesh(path)?;
        ObjectModel::from_mesh(mesh, model_id, DEFAULT_MODEL_SAMPLES)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn sample_cloud(&self) -> &PointCloud {
        &self.sample_cloud
    }

    /// Dense reference surface for registration and reuse checks.
    pub fn detection_cloud(&self) -> &PointCloud {
        &self.detection_cloud
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn aabb(&self) -> Aabb {
        self.mesh.aabb()
    }

    /// Largest AABB extent, a convenient size scale.
    pub fn max_extent(&self) -> f64 {
        self.aabb()
            .extents()
            .into_iter()
            .fold(0.0f64, f64::max)
    }

    /// FNV-1a over the mesh geometry; used to detect stale template caches.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for tri in self.mesh.triangles() {
            for p in [tri.a, tri.b, tri.c] {
                eat(p.x.to_bits());
                eat(p.y.to_bits());
                eat(p.z.to_bits());
            }
        }
        h
    }
}

/// One placed object instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub pose: RigidTransform,
}

/// A pile of identical objects inside a storage box.
#[derive(Debug, Clone)]
pub struct Scene {
    bin: Aabb,
    instances: Vec<Instance>,
    model: Arc<ObjectModel>,
    seed: u64,
}

impl Scene {
    pub fn new(bin: Aabb, instances: Vec<Instance>, model: Arc<ObjectModel>, seed: u64) -> Self {
        Scene {
            bin,
            instances,
            model,
            seed,
        }
    }

    pub fn bin(&self) -> Aabb {
        self.bin
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, id: usize) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn model(&self) -> &Arc<ObjectModel> {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// World-frame sample cloud of one instance.
    pub fn instance_cloud(&self, id: usize) -> Result<PointCloud> {
        let inst = self
            .instance(id)
            .ok_or(Error::UnknownInstance(id))?;
        Ok(
            crate::geom::apply_transform(self.model.sample_cloud(), &inst.pose)
                .with_frame(crate::geom::Frame::World),
        )
    }

    pub fn instance_aabb(&self, id: usize) -> Result<Aabb> {
        compute_aabb(&self.instance_cloud(id)?)
    }
}

/// Pinhole depth-sensor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorIntrinsics {
    /// Full horizontal field of view, radians.
    pub horizontal_fov: f64,
    /// Full vertical field of view, radians.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Gaussian range noise sigma along each ray, meters.
    pub noise_sigma: f64,
}

impl Default for SensorIntrinsics {
    fn default() -> Self {
        SensorIntrinsics {
            horizontal_fov: 58f64.to_radians(),
            vertical_fov: 45f64.to_radians(),
            width: 320,
            height: 240,
            min_range: 0.1,
            max_range: 3.0,
            noise_sigma: 0.0015,
        }
    }
}

impl SensorIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < std::f64::consts::PI) {
            return Err(Error::validation("horizontal_fov", "must be in (0, pi)"));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::validation("vertical_fov", "must be in (0, pi)"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("width/height", "must be at least 1"));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) {
            return Err(Error::validation("min_range", "need 0 <= min_range < max_range"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::validation("noise_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// How a pick shakes the pile: neighbors within `contact_radius` of the
/// removed object receive a bounded random motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickDisturbance {
    pub contact_radius: f64,
    pub max_translation: f64,
    pub max_rotation: f64,
}

impl Default for PickDisturbance {
    fn default() -> Self {
        PickDisturbance {
            contact_radius: 0.02,
            max_translation: 0.01,
            max_rotation: 10f64.to_radians(),
        }
    }
}

impl PickDisturbance {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("contact_radius", self.contact_radius),
            ("max_translation", self.max_translation),
            ("max_rotation", self.max_rotation),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::validation(name, "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    #[serde(rename = "box")]
    bin: Aabb,
    model_path: String,
    model_id: String,
    seed: u64,
    instances: Vec<InstanceRepr>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    instance_id: usize,
    quaternion: [f64; 4],
    translation: [f64; 3],
}

/// Saves a scene as JSON; the model is stored as a mesh path, not inline.
pub fn save_scene(path: &Path, scene: &Scene, model_path: &str) -> Result<()> {
    let file = SceneFile {
        bin: scene.bin,
        model_path: model_path.to_string(),
        model_id: scene.model.model_id().to_string(),
        seed: scene.seed,
        instances: scene
            .instances
            .iter()
            .map(|inst| {
                let rot = inst.pose.rotation();
                let q = rot.quaternion();
                InstanceRepr {
                    instance_id: inst.id,
                    quaternion: [q.w, q.i, q.j, q.k],
                    translation: inst.pose.translation().into(),
                }
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Loads a scene; a relative model path resolves against the scene file's
/// directory.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile = serde_json::from_str(&text)?;
    let model_path = {
        let p = Path::new(&file.model_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let model = ObjectModel::from_mesh_file(&model_path, file.model_id)?;
    let instances = file
        .instances
        .iter()
        .map(|r| {
            let q = nalgebra::Quaternion::new(
                r.quaternion[0],
                r.quaternion[1],
                r.quaternion[2],
                r.quaternion[3],
            );
            Instance {
                id: r.instance_id,
                pose: RigidTransform::new(
                    nalgebra::UnitQuaternion::from_quaternion(q),
                    nalgebra::Vector3::from(r.translation),
                ),
            }
        })
        .collect();
    Ok(Scene::new(file.bin, instances, Arc::new(model), file.seed))
}

/// Standard normal draw (Box–Muller), deterministic per rng stream.
pub(crate) fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
