//! C-DOG: descriptor-free association of 2D point detections across
//! calibrated multi-camera views into per-3D-point groups.
//!
//! The pipeline works purely from camera poses and pixel coordinates:
//!
//! 1. [`graph::init_graph`] — per-view argmin epipolar-distance edges below
//!    a noise-derived threshold.
//! 2. [`graph::prune_weak_edges`] — neighborhood-overlap pruning of weak
//!    cross-group links.
//! 3. [`refine::remove_outliers`] — group-level IQR filtering on per-node
//!    back-projection error.
//! 4. [`refine::remove_error_groups`] — adaptive removal of whole groups
//!    whose back-projection error jumps away from the rest.
//!
//! Supporting pieces: [`geometry`] (fundamental matrices, triangulation),
//! [`benchmark`] (deterministic synthetic scene generation), [`metrics`]
//! (group/point/perfect-group score families), [`baselines`] (greedy and
//! connected-component associators) and [`harness`] (batch evaluation).

pub mod baselines;
pub mod benchmark;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod scene;

/// 2D pixel coordinates.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3D world/camera coordinates.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix (intrinsics, rotations, fundamental matrices).
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use geometry::{CameraPose, EpipolarLine, FundamentalCache, GeometryError};
pub use pipeline::{associate, AssociationResult, CdogConfig};
pub use graph::{AssociationGraph, AssociationGroup};
pub use scene::{NodeId, Observation, Scene};
