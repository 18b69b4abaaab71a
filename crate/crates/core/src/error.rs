//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("voxel cell size must be positive, got {0}")]
    NonPositiveCell(f64),

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },

    #[error("cloud is in frame {found:?}, expected {expected:?}")]
    FrameMismatch {
        expected: crate::geom::Frame,
        found: crate::geom::Frame,
    },

    #[error("failed to place instance {instance} after {attempts} attempts")]
    PlacementFailure { instance: usize, attempts: usize },

    #[error("unknown instance id {0}")]
    UnknownInstance(usize),

    #[error("no sensor pose candidate satisfies the feasibility conditions")]
    NoFeasibleCandidate,

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("occupancy grid carries no occupied or occluded cells")]
    GridUnmarked,

    #[error("cloud has {found} points, at least {needed} required")]
    TooFewPoints { needed: usize, found: usize },

    #[error("model view {view} produced only {points} points")]
    DegenerateModel { view: usize, points: usize },

    #[error("no correspondences within {max_dist} m at the initial pose")]
    NoCorrespondences { max_dist: f64 },

    #[error("no previous segments; use the first-trial path")]
    NoPreviousSegments,

    #[error("segments do not all reference the same parent cloud")]
    InconsistentParents,

    #[error("invalid config field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
