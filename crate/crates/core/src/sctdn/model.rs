//! Parameters, forward pass, losses, and the reverse pass of the full
//! network.

use ndarray::{s, Array1, Array2, Axis};

use super::config::ModelConfig;
use super::encoder::{encode, encode_backward, EncoderParams, EncoderTrace};
use super::layers::{sigmoid, Dense, Mlp, MlpCache, Parameters, TensorRef};
use super::lstm::{self, LayerTrace, LstmCell};
use super::SctdnError;
use crate::{rng, Vec3};

/// All learnable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    /// Present when `separate_encoders` is set.
    pub cls_encoder: Option<EncoderParams>,
    pub cls_hidden: Dense,
    pub cls_out: Dense,
    pub affordance: Dense,
    pub waypoint: Mlp,
    pub lstm: Vec<LstmCell>,
    pub offset: Dense,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, "sctdn-init", 0);
        let encoder = EncoderParams::init(config, true, &mut r);
        let cls_encoder = config
            .separate_encoders
            .then(|| EncoderParams::init(config, false, &mut r));
        let cls_hidden = Dense::init(config.global_dim(), config.cls_hidden, &mut r);
        let cls_out = Dense::init(config.cls_hidden, config.k, &mut r);
        let affordance = Dense::init(config.feature_dim(), 1, &mut r);
        let waypoint = Mlp::init(3, &config.waypoint_mlp, &mut r);
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        let mut input = config.lstm_input();
        for _ in 0..config.lstm_layers {
            lstm.push(LstmCell::init(input, config.lstm_hidden, &mut r));
            input = config.lstm_hidden;
        }
        let mut offset = Dense::init(config.lstm_hidden, 3, &mut r);
        // start close to the undeformed template
        offset.w.mapv_inplace(|v| v * 0.1);
        ModelParams {
            config: config.clone(),
            encoder,
            cls_encoder,
            cls_hidden,
            cls_out,
            affordance,
            waypoint,
            lstm,
            offset,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        let mut input = config.lstm_input();
        for _ in 0..config.lstm_layers {
            lstm.push(LstmCell::zeros(input, config.lstm_hidden));
            input = config.lstm_hidden;
        }
        ModelParams {
            config: config.clone(),
            encoder: EncoderParams::zeros(config, true),
            cls_encoder: config.separate_encoders.then(|| EncoderParams::zeros(config, false)),
            cls_hidden: Dense::zeros(config.global_dim(), config.cls_hidden),
            cls_out: Dense::zeros(config.cls_hidden, config.k),
            affordance: Dense::zeros(config.feature_dim(), 1),
            waypoint: Mlp::zeros(3, &config.waypoint_mlp),
            lstm,
            offset: Dense::zeros(config.lstm_hidden, 3),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Named tensors in the fixed checkpoint order.
    pub fn manifest(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        self.tensors("", &mut out);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.tensors_mut(&mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.manifest().iter().map(|t| t.data.len()).sum()
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &ModelParams) {
        let src: Vec<&[f64]> = other.manifest().into_iter().map(|t| t.data).collect();
        for (dst, src) in self.slices_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for dst in self.slices_mut() {
            for d in dst.iter_mut() {
                *d *= a;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.manifest().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

impl Parameters for ModelParams {
    fn tensors<'a>(&'a self, _prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.encoder.tensors("encoder", out);
        if let Some(e) = &self.cls_encoder {
            e.tensors("cls_encoder", out);
        }
        self.cls_hidden.tensors("cls_hidden", out);
        self.cls_out.tensors("cls_out", out);
        self.affordance.tensors("affordance", out);
        self.waypoint.tensors("waypoint", out);
        for (i, c) in self.lstm.iter().enumerate() {
            c.tensors(&format!("lstm.{i}"), out);
        }
        self.offset.tensors("offset", out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.encoder.tensors_mut(out);
        if let Some(e) = &mut self.cls_encoder {
            e.tensors_mut(out);
        }
        self.cls_hidden.tensors_mut(out);
        self.cls_out.tensors_mut(out);
        self.affordance.tensors_mut(out);
        self.waypoint.tensors_mut(out);
        for c in &mut self.lstm {
            c.tensors_mut(out);
        }
        self.offset.tensors_mut(out);
    }
}

/// Smallest cloud the full network accepts.
pub const MIN_POINTS: usize = 64;

/// Encoder plus the classification and affordance heads.
#[derive(Debug, Clone)]
pub struct Perception {
    pub encoder: EncoderTrace,
    pub cls_encoder: Option<EncoderTrace>,
    cls_h: Array1<f64>,
    pub logits: Array1<f64>,
    pub affordance: Array1<f64>,
}

impl Perception {
    /// Per-point features `f^S`.
    pub fn features(&self) -> &Array2<f64> {
        self.encoder.features.as_ref().expect("main encoder propagates to points")
    }

    /// Global feature `f^g` that feeds the classifier.
    pub fn global(&self) -> &Array1<f64> {
        &self.cls_encoder.as_ref().unwrap_or(&self.encoder).global
    }

    pub fn class(&self) -> usize {
        argmax(self.logits.as_slice().expect("contiguous"))
    }
}

/// Lowest index among maximal values.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn classify(params: &ModelParams, global: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let h = params.cls_hidden.forward_vec(global).mapv(|v| v.max(0.0));
    let logits = params.cls_out.forward_vec(&h);
    (h, logits)
}

pub fn affordance_head(params: &ModelParams, features: &Array2<f64>) -> Array1<f64> {
    params
        .affordance
        .forward(features)
        .column(0)
        .mapv(sigmoid)
}

pub fn perceive(params: &ModelParams, points: &[Vec3]) -> Result<Perception, SctdnError> {
    if points.len() < MIN_POINTS {
        return Err(SctdnError::TooFewPoints(points.len()));
    }
    let cfg = &params.config;
    let encoder = encode(cfg, &params.encoder, points, true);
    let cls_encoder = params
        .cls_encoder
        .as_ref()
        .map(|e| encode(cfg, e, points, false));
    let global = &cls_encoder.as_ref().unwrap_or(&encoder).global;
    let (cls_h, logits) = classify(params, global);
    let affordance = affordance_head(params, encoder.features.as_ref().expect("propagated"));
    Ok(Perception {
        encoder,
        cls_encoder,
        cls_h,
        logits,
        affordance,
    })
}

/// Max-pool over the predicted hanging part.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub feature: Array1<f64>,
    /// Source row of every pooled column.
    pub rows: Vec<usize>,
    /// No point passed the threshold; the argmax row was used instead.
    pub fallback: bool,
}

pub fn shape_conditioned_feature(features: &Array2<f64>, affordance: &[f64], threshold: f64) -> Condition {
    let cols = features.ncols();
    let mut feature = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut rows = vec![usize::MAX; cols];
    let mut any = false;
    for (r, a) in affordance.iter().enumerate() {
        if *a <= threshold {
            continue;
        }
        any = true;
        for c in 0..cols {
            if features[[r, c]] > feature[c] {
                feature[c] = features[[r, c]];
                rows[c] = r;
            }
        }
    }
    if !any {
        let r = argmax(affordance);
        return Condition {
            feature: features.row(r).to_owned(),
            rows: vec![r; cols],
            fallback: true,
        };
    }
    Condition {
        feature,
        rows,
        fallback: false,
    }
}

/// Shifts the template so its hanging end sits on `contact`.
pub fn align_template(template: &[Vec3], contact: &Vec3) -> Vec<Vec3> {
    let shift = contact - template[0];
    let mut out: Vec<Vec3> = template.iter().map(|p| p + shift).collect();
    out[0] = *contact;
    out
}

#[derive(Debug, Clone)]
pub struct DeformTrace {
    wp_cache: MlpCache,
    lstm: Vec<LayerTrace>,
    top: Array2<f64>,
    pub offsets: Array2<f64>,
}

pub fn deform(params: &ModelParams, aligned: &[Vec3], f_cond: &Array1<f64>) -> DeformTrace {
    let t = aligned.len();
    let input = Array2::from_shape_fn((t, 3), |(i, j)| aligned[i][j]);
    let (wp, wp_cache) = params.waypoint.forward(input);
    let wd = wp.ncols();
    let mut x = Array2::zeros((t, wd + f_cond.len()));
    x.slice_mut(s![.., ..wd]).assign(&wp);
    for mut row in x.slice_mut(s![.., wd..]).rows_mut() {
        row.assign(f_cond);
    }
    let (top, lstm) = lstm::forward(&params.lstm, &x);
    let offsets = params.offset.forward(&top);
    DeformTrace {
        wp_cache,
        lstm,
        top,
        offsets,
    }
}

/// Full training-time forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub perception: Perception,
    pub condition: Condition,
    pub deform: DeformTrace,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Array1<f64> {
        &self.perception.logits
    }

    pub fn affordance(&self) -> &Array1<f64> {
        &self.perception.affordance
    }

    pub fn offsets(&self) -> &Array2<f64> {
        &self.deform.offsets
    }
}

/// `points` and `aligned` are in normalised coordinates. `pool_on` selects
/// the hanging part: ground-truth affordance under teacher forcing, or the
/// predicted map when `None`.
pub fn forward(
    params: &ModelParams,
    points: &[Vec3],
    aligned: &[Vec3],
    pool_on: Option<&[f64]>,
) -> Result<ForwardTrace, SctdnError> {
    if aligned.len() != params.config.t {
        return Err(SctdnError::ShapeMismatch(format!(
            "template has {} waypoints, model expects {}",
            aligned.len(),
            params.config.t
        )));
    }
    let perception = perceive(params, points)?;
    let pred = perception.affordance.to_vec();
    let mask = pool_on.unwrap_or(&pred);
    if mask.len() != points.len() {
        return Err(SctdnError::ShapeMismatch("pooling mask length differs from cloud".into()));
    }
    let condition = shape_conditioned_feature(perception.features(), mask, params.config.affordance_threshold);
    let deform = deform(params, aligned, &condition.feature);
    Ok(ForwardTrace {
        perception,
        condition,
        deform,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub traj: f64,
    pub aff: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            traj: 1.0,
            aff: 0.1,
            cls: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub traj: f64,
    pub aff: f64,
    pub cls: f64,
}

/// Gradients of the loss with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub logits: Array1<f64>,
    pub affordance: Array1<f64>,
    pub offsets: Array2<f64>,
}

impl OutputGrads {
    pub fn scaled(&self, a: f64) -> Self {
        OutputGrads {
            logits: &self.logits * a,
            affordance: &self.affordance * a,
            offsets: &self.offsets * a,
        }
    }
}

/// Softmax cross-entropy and its gradient `softmax − onehot`.
pub fn cross_entropy(logits: &Array1<f64>, class: usize) -> (f64, Array1<f64>) {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - m).exp());
    let z = exp.sum();
    let loss = z.ln() + m - logits[class];
    let mut grad = exp / z;
    grad[class] -= 1.0;
    (loss, grad)
}

fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}

pub fn loss_total(
    trace: &ForwardTrace,
    gt_class: usize,
    gt_affordance: &[f64],
    gt_offsets: &Array2<f64>,
    w: &LossWeights,
) -> Result<(LossTerms, OutputGrads), SctdnError> {
    let logits = trace.logits();
    if gt_class >= logits.len() {
        return Err(SctdnError::ShapeMismatch(format!("class {gt_class} out of range")));
    }
    if gt_affordance.len() != trace.affordance().len() {
        return Err(SctdnError::ShapeMismatch("affordance length".into()));
    }
    if gt_offsets.shape() != trace.offsets().shape() {
        return Err(SctdnError::ShapeMismatch("offset shape".into()));
    }
    let (l_c, d_logits) = cross_entropy(logits, gt_class);
    let (l_a, d_aff) = mse(trace.affordance().as_slice().expect("contiguous"), gt_affordance);
    let pred_off = trace.offsets().iter().cloned().collect::<Vec<_>>();
    let gt_off = gt_offsets.iter().cloned().collect::<Vec<_>>();
    let (l_t, d_off) = mse(&pred_off, &gt_off);
    let terms = LossTerms {
        total: w.traj * l_t + w.aff * l_a + w.cls * l_c,
        traj: l_t,
        aff: l_a,
        cls: l_c,
    };
    let grads = OutputGrads {
        logits: d_logits * w.cls,
        affordance: Array1::from(d_aff) * w.aff,
        offsets: Array2::from_shape_vec(gt_offsets.raw_dim(), d_off)
            .expect("same shape")
            * w.traj,
    };
    Ok((terms, grads))
}

/// Reverse pass from output gradients to every parameter.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, seed: &OutputGrads) -> ModelParams {
    let mut g = params.zeros_like();
    let cfg = &params.config;

    // deformation
    let d_top = params.offset.backward(&trace.deform.top, &seed.offsets, &mut g.offset);
    let d_x = lstm::backward(&params.lstm, &trace.deform.lstm, &d_top, &mut g.lstm);
    let wd = cfg.waypoint_dim();
    params.waypoint.backward(
        &trace.deform.wp_cache,
        d_x.slice(s![.., ..wd]).to_owned(),
        &mut g.waypoint,
    );
    let d_cond = d_x.slice(s![.., wd..]).sum_axis(Axis(0));

    let features = trace.perception.features();
    let mut d_feat = Array2::zeros(features.raw_dim());
    for (c, &r) in trace.condition.rows.iter().enumerate() {
        d_feat[[r, c]] += d_cond[c];
    }

    // affordance head
    let a = &trace.perception.affordance;
    let dz = Array2::from_shape_fn((a.len(), 1), |(i, _)| seed.affordance[i] * a[i] * (1.0 - a[i]));
    d_feat += &params.affordance.backward(features, &dz, &mut g.affordance);

    // classifier
    let d_h = params
        .cls_out
        .backward_vec(&trace.perception.cls_h, &seed.logits, &mut g.cls_out);
    let d_h = Array1::from_shape_fn(d_h.len(), |j| if trace.perception.cls_h[j] > 0.0 { d_h[j] } else { 0.0 });
    let global = trace.perception.global();
    let d_global = params.cls_hidden.backward_vec(global, &d_h, &mut g.cls_hidden);

    match (&params.cls_encoder, &trace.perception.cls_encoder, &mut g.cls_encoder) {
        (Some(p), Some(t), Some(ge)) => {
            encode_backward(p, t, None, &d_global, ge);
            let zero = Array1::zeros(trace.perception.encoder.global.len());
            encode_backward(&params.encoder, &trace.perception.encoder, Some(&d_feat), &zero, &mut g.encoder);
        }
        _ => {
            encode_backward(&params.encoder, &trace.perception.encoder, Some(&d_feat), &d_global, &mut g.encoder);
        }
    }
    g
}

/// Gradient of the total loss for one sample.
pub fn loss_and_grad(
    params: &ModelParams,
    points: &[Vec3],
    aligned: &[Vec3],
    gt_class: usize,
    gt_affordance: &[f64],
    gt_offsets: &Array2<f64>,
    w: &LossWeights,
) -> Result<(LossTerms, ModelParams), SctdnError> {
    let trace = forward(params, points, aligned, Some(gt_affordance))?;
    let (terms, seed) = loss_total(&trace, gt_class, gt_affordance, gt_offsets, w)?;
    Ok((terms, backward(params, &trace, &seed)))
}
