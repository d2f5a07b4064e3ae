//! Shape-conditioned trajectory deformation network.
//!
//! A shared point-cloud encoder feeds a classification head (which template
//! to retrieve) and a per-point affordance head (where the object hangs).
//! Features pooled over the predicted hanging part condition an LSTM that
//! predicts per-waypoint offsets for the retrieved template once it has been
//! shifted onto the predicted contact point.
//!
//! Everything runs in `f64` with hand-written reverse-mode gradients; see
//! [`model::backward`].

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use config::{ModelConfig, SetAbstraction};
pub use encoder::Normalizer;
pub use model::{
    align_template, backward, cross_entropy, deform, forward, loss_and_grad, loss_total, perceive,
    shape_conditioned_feature, Condition, ForwardTrace, LossTerms, LossWeights, ModelParams, OutputGrads,
};

use crate::geometry::{augment_trajectory, GeometryError, Gravity, SkTrajectory};
use crate::labels::TemplateDb;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SctdnError {
    #[error("cloud has {0} points; at least 64 are required")]
    TooFewPoints(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Overrides used by ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictOptions {
    /// Skip the deformation module (template-only alignment).
    pub zero_offsets: bool,
    /// Align to this point instead of the predicted contact.
    pub contact: Option<Vec3>,
    /// Use this template instead of the predicted category.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub skt: SkTrajectory,
    pub class: usize,
    pub contact_index: usize,
    pub contact: Vec3,
    pub affordance: Vec<f64>,
    /// Predicted offsets in metres, item frame.
    pub offsets: Vec<Vec3>,
    pub pooling_fallback: bool,
}

/// Full inference: classify, pick the contact, align the template, deform,
/// and lift to SE(3).
pub fn predict_skt(
    params: &ModelParams,
    cloud: &[Vec3],
    db: &TemplateDb,
    frame_id: &str,
) -> Result<Prediction, SctdnError> {
    predict_with(params, cloud, db, frame_id, PredictOptions::default())
}

pub fn predict_with(
    params: &ModelParams,
    cloud: &[Vec3],
    db: &TemplateDb,
    frame_id: &str,
    opts: PredictOptions,
) -> Result<Prediction, SctdnError> {
    let cfg = &params.config;
    if db.t != cfg.t {
        return Err(SctdnError::ShapeMismatch(format!(
            "template length {} differs from model T = {}",
            db.t, cfg.t
        )));
    }
    let nz = Normalizer::fit(cloud);
    let pts: Vec<Vec3> = cloud.iter().map(|p| nz.apply(p)).collect();
    let perception = perceive(params, &pts)?;
    let class = opts.class.unwrap_or_else(|| perception.class());
    let template = db
        .templates
        .get(class)
        .ok_or_else(|| SctdnError::ShapeMismatch(format!("no template for class {class}")))?;
    let affordance = perception.affordance.to_vec();
    let contact_index = model::argmax(&affordance);
    let contact = opts.contact.unwrap_or(cloud[contact_index]);
    let aligned = align_template(template, &contact);

    let (positions, offsets, pooling_fallback) = if opts.zero_offsets {
        (aligned.clone(), vec![Vec3::zeros(); aligned.len()], false)
    } else {
        let aligned_n: Vec<Vec3> = aligned.iter().map(|p| nz.apply(p)).collect();
        let cond = shape_conditioned_feature(perception.features(), &affordance, cfg.affordance_threshold);
        let d = deform(params, &aligned_n, &cond.feature);
        let offsets: Vec<Vec3> = d
            .offsets
            .rows()
            .into_iter()
            .map(|r| Vec3::new(r[0], r[1], r[2]) * nz.scale)
            .collect();
        let positions = aligned.iter().zip(&offsets).map(|(a, o)| a + o).collect();
        (positions, offsets, cond.fallback)
    };
    let skt = augment_trajectory(&positions, &Gravity::down(), frame_id)?;
    Ok(Prediction {
        skt,
        class,
        contact_index,
        contact,
        affordance,
        offsets,
        pooling_fallback,
    })
}

#[cfg(test)]
mod tests;
