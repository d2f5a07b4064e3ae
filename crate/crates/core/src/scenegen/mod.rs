//! Procedural scenes: supporting items, ring objects, partial clouds.

pub mod capture;
pub mod item;
pub mod object;
pub mod ply;
pub mod sampling;

pub use capture::{camera_views, capture_partial_cloud, look_at, CameraView, CaptureError, PointCloud};
pub use item::{generate_item, Difficulty, SupportItem};
pub use object::{generate_object, Capsule, Category, HangObject, PlacedObject};
pub use sampling::{denoise_dbscan, farthest_point_sample, SamplingError};
