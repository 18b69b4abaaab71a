//! Perception stack for randomized bin-picking with iterative re-recognition.
//!
//! A depth sensor on a robot wrist captures a pile of identical objects in a
//! box, one capture per picking trial. Because a pick disturbs only a few
//! objects, most of the pile is unchanged between trials; this crate plans
//! the sensor pose that maximizes pile visibility, detects 6-DoF object
//! poses, and carries unchanged regions of the previous capture forward so
//! that only changed segments are re-estimated.
//!
//! Modules follow the pipeline stages:
//!
//! - [`geom`]: point clouds, rigid transforms, exact nearest-neighbor search
//! - [`io`]: PLY / PCD / OBJ readers and writers
//! - [`sim`]: synthetic piles, depth rendering, pick disturbance
//! - [`view`]: sensor pose candidates and occupancy-grid visibility scoring
//! - [`segment`]: plane removal, Euclidean clustering, bounding-box gating
//! - [`pose`]: view templates, coarse matching, ICP refinement
//! - [`merge`]: cross-trial cloud merging and pose-reuse decisions
//! - [`pipeline`]: end-to-end trial series with file artifacts and metrics

pub use nalgebra;

pub mod error;
pub mod geom;
pub mod io;
pub mod merge;
pub mod pipeline;
pub mod pose;
pub mod segment;
pub mod sim;
pub mod view;

pub use error::Error;
pub use geom::{Aabb, Frame, NnIndex, Point3, PointCloud, RigidTransform};
pub use merge::{MergeParams, MergeReport, SegmentDecision};
pub use pipeline::{PipelineConfig, SeriesMetrics, TrialRecord};
pub use pose::{IcpParams, PoseEstimate, Provenance, ViewTemplate};
pub use segment::{ClusterParams, Segment};
pub use sim::{ObjectModel, PickDisturbance, Scene, SensorIntrinsics};
pub use view::{OccupancyGrid, SensorPoseCandidate, ViewPlanParams};

/// Library result type.
pub type Result<T> = std::result::Result<T, Error>;
