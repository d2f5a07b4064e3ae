//! Labels derived from ground truth: the template trajectory database and
//! affordance maps.

pub mod affordance;
pub mod kmeans;
pub mod pca;
pub mod templates;

pub use affordance::{affordance_gt, AffordanceMap, AffordanceParams};
pub use kmeans::{kmeans, KMeans};
pub use pca::{pca_fit, Pca, PcaError};
pub use templates::{build_template_db, flatten_relative, BuildOutput, TemplateDb, TemplateError};
