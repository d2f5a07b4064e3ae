//! Semantic keypoint trajectory (SKT) synthesis for hanging objects.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`geometry`]: SE(3) poses, SKT containers, gravity-aligned rotation
//!   construction, arc-length resampling.
//! * [`scenegen`]: procedural hooks and ring objects, simulated partial
//!   point clouds, farthest point sampling and DBSCAN denoising.
//! * [`simcheck`]: the quasi-static hanging oracle (clearance, linking,
//!   settling, contact extraction, execution judgment).
//! * [`planner`]: RRT-Connect in keypoint space and SKT post-processing.
//! * [`labels`]: template trajectory database (PCA + k-means) and
//!   ground-truth affordance maps.
//! * [`sctdn`]: the shape-conditioned trajectory deformation network with
//!   hand-written reverse-mode gradients.
//! * [`training`] and [`eval`]: optimisation loop and the evaluation harness.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod eval;
pub mod geometry;
pub mod labels;
pub mod par;
pub mod planner;
pub mod rng;
pub mod scenegen;
pub mod sctdn;
pub mod simcheck;
pub mod training;

pub use geometry::{Gravity, Pose, SkTrajectory};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Bumped whenever an on-disk artifact layout changes.
pub const PIPELINE_VERSION: u32 = 1;
