//! Location prediction stage: a predictor emits `(center offset, length)`
//! per short video, the frozen mapper turns the proposal into a soft mask,
//! masked pooling produces foreground/background features, and a shared
//! classifier supplies the category supervision.
//!
//! Gradients reach the predictor only through the frozen mapper; its
//! parameters never move.

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::error::{PtalError, Result};
use crate::keypoint::ShortVideo;
use crate::mapper::{mapper_forward, Proposal, TemporalMask};
use crate::mat::{dot, Matrix};
use crate::nn::{
    adam_step, cross_entropy, read_network, write_network, Activation, AdamState, CheckpointMeta,
    LayerSpec, Network, PROB_EPS,
};

/// Divisor used by masked pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolNorm {
    /// Divide by the number of frames `T_s` (printed formula).
    FrameCount,
    /// Divide by the mask mass, i.e. a true weighted average.
    MaskMass,
}

impl std::str::FromStr for PoolNorm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "frame-count" => Ok(PoolNorm::FrameCount),
            "mask-mass" => Ok(PoolNorm::MaskMass),
            other => Err(format!("unknown pool norm '{other}' (frame-count|mask-mass)")),
        }
    }
}

/// Mask-weighted pooled feature, divided by the frame count.
pub fn pool_foreground(features: &Matrix, mask: &TemporalMask) -> Vec<f64> {
    pool_foreground_with(features, mask, PoolNorm::FrameCount)
}

/// Complement-weighted pooled feature, divided by the frame count.
pub fn pool_background(features: &Matrix, mask: &TemporalMask) -> Vec<f64> {
    pool_background_with(features, mask, PoolNorm::FrameCount)
}

pub fn pool_foreground_with(features: &Matrix, mask: &TemporalMask, norm: PoolNorm) -> Vec<f64> {
    debug_assert_eq!(features.rows(), mask.values.len());
    let mut out = vec![0.0; features.cols()];
    for (t, m) in mask.values.iter().enumerate() {
        let row = features.row(t);
        for (o, x) in out.iter_mut().zip(row) {
            *o += m * x;
        }
    }
    let divisor = match norm {
        PoolNorm::FrameCount => features.rows() as f64,
        PoolNorm::MaskMass => mask.values.iter().sum::<f64>().max(PROB_EPS),
    };
    for o in &mut out {
        *o /= divisor;
    }
    out
}

pub fn pool_background_with(features: &Matrix, mask: &TemporalMask, norm: PoolNorm) -> Vec<f64> {
    let complement = TemporalMask { values: mask.values.iter().map(|m| 1.0 - m).collect() };
    pool_foreground_with(features, &complement, norm)
}

/// `H(y_bg, y_bg_hat) + beta * H(y_fg, y_fg_hat)` with one-hot targets:
/// the foreground target is the annotated class, the background target is
/// the extra class at index `C`.
pub fn classification_loss(
    y_fg_hat: &[f64],
    y_bg_hat: &[f64],
    target_class: usize,
    beta: f64,
) -> Result<f64> {
    let c_plus_1 = y_fg_hat.len();
    if y_bg_hat.len() != c_plus_1 {
        return Err(PtalError::Dimension(
            "foreground and background predictions must have equal length".into(),
        ));
    }
    if target_class >= c_plus_1 - 1 {
        return Err(PtalError::Annotation(format!(
            "class id {target_class} out of range for {} action classes",
            c_plus_1 - 1
        )));
    }
    let mut y_fg = vec![0.0; c_plus_1];
    y_fg[target_class] = 1.0;
    let mut y_bg = vec![0.0; c_plus_1];
    y_bg[c_plus_1 - 1] = 1.0;
    Ok(cross_entropy(&y_bg, y_bg_hat)? + beta * cross_entropy(&y_fg, y_fg_hat)?)
}

/// Gradient of categorical cross-entropy against a one-hot target, with
/// the same floor semantics as the loss.
fn one_hot_ce_grad(pred: &[f64], hot: usize, scale: f64, out: &mut [f64]) {
    for g in out.iter_mut() {
        *g = 0.0;
    }
    if pred[hot] > PROB_EPS {
        out[hot] = -scale / pred[hot];
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizerTrainConfig {
    pub t_s: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    /// Predict a center offset; off treats the keypoint as the center.
    pub use_offset: bool,
    /// Apply the background term of the loss.
    pub use_bg_loss: bool,
    pub pool_norm: PoolNorm,
}

impl Default for LocalizerTrainConfig {
    fn default() -> Self {
        LocalizerTrainConfig {
            t_s: 64,
            hidden: 64,
            kernel: 3,
            epochs: 50,
            lr: 1e-4,
            beta: 1.25,
            seed: 7,
            use_offset: true,
            use_bg_loss: true,
            pool_norm: PoolNorm::FrameCount,
        }
    }
}

/// Predictor + shared classifier around a frozen mapper.
#[derive(Debug, Clone)]
pub struct LocalizerModel {
    /// conv part of the predictor: `T_s x D -> T_s x hidden`, mean-pooled
    /// over time before the head.
    pub trunk: Network,
    /// dense head: `hidden -> hidden relu -> 2` raw outputs
    /// `(offset, length)`.
    pub head: Network,
    /// shared classifier: `D -> hidden relu -> C+1 softmax`.
    pub classifier: Network,
    pub mapper: Network,
    pub config: LocalizerTrainConfig,
}

impl LocalizerModel {
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        mapper: Network,
        cfg: &LocalizerTrainConfig,
    ) -> Result<Self> {
        if !mapper.is_frozen() {
            return Err(PtalError::Config("mapper must be frozen".into()));
        }
        if mapper.out_dim() != cfg.t_s {
            return Err(PtalError::Dimension(format!(
                "mapper emits {} frames but t_s is {}",
                mapper.out_dim(),
                cfg.t_s
            )));
        }
        let trunk = Network::new(
            vec![LayerSpec::conv1d(feature_dim, cfg.hidden, cfg.kernel, Activation::Relu)],
            cfg.seed,
        )?;
        let head = Network::new(
            vec![
                LayerSpec::dense(cfg.hidden, cfg.hidden, Activation::Relu),
                LayerSpec::dense(cfg.hidden, 2, Activation::None),
            ],
            cfg.seed.wrapping_add(1),
        )?;
        let classifier = Network::new(
            vec![
                LayerSpec::dense(feature_dim, cfg.hidden, Activation::Relu),
                LayerSpec::dense(cfg.hidden, num_classes + 1, Activation::Softmax),
            ],
            cfg.seed.wrapping_add(2),
        )?;
        Ok(LocalizerModel { trunk, head, classifier, mapper, config: cfg.clone() })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim() - 1
    }
}

/// Raw predictor outputs squashed into proposal space.
fn squash(raw_offset: f64, raw_length: f64, keypoint_pos: f64, use_offset: bool) -> Proposal {
    let dp = if use_offset { raw_offset.tanh() / 2.0 } else { 0.0 };
    let center = (keypoint_pos + dp).clamp(0.0, 1.0);
    let length = 1.0 / (1.0 + (-raw_length).exp());
    Proposal { center, length }
}

/// Runs the predictor on one short video.
pub fn predict_proposal(model: &LocalizerModel, sv: &ShortVideo) -> Result<Proposal> {
    if sv.features.rows() != model.config.t_s || sv.features.cols() != model.trunk.in_dim() {
        return Err(PtalError::Dimension(format!(
            "short video is {}x{}, predictor expects {}x{}",
            sv.features.rows(),
            sv.features.cols(),
            model.config.t_s,
            model.trunk.in_dim()
        )));
    }
    let conv = model.trunk.forward(&sv.features)?;
    let pooled = Matrix::from_vec(1, conv.cols(), conv.column_mean());
    let raw = model.head.forward(&pooled)?;
    Ok(squash(raw.get(0, 0), raw.get(0, 1), sv.keypoint_pos, model.config.use_offset))
}

/// Everything the backward pass needs from one forward evaluation.
pub struct LocalizerPass {
    pub proposal: Proposal,
    pub mask: TemporalMask,
    pub x_fg: Vec<f64>,
    pub x_bg: Vec<f64>,
    pub y_fg_hat: Vec<f64>,
    pub y_bg_hat: Vec<f64>,
    pub loss: f64,
    raw_offset: f64,
    raw_length: f64,
    trunk_trace: Vec<Matrix>,
    head_trace: Vec<Matrix>,
    fg_trace: Vec<Matrix>,
    bg_trace: Vec<Matrix>,
}

/// Full differentiable path for one labeled short video.
pub fn localizer_pass(
    model: &LocalizerModel,
    sv: &ShortVideo,
    target_class: usize,
) -> Result<LocalizerPass> {
    if target_class >= model.num_classes() {
        return Err(PtalError::Annotation(format!(
            "class id {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let cfg = &model.config;
    let trunk_trace = model.trunk.forward_trace(&sv.features)?;
    let conv = trunk_trace.last().unwrap();
    let pooled = Matrix::from_vec(1, conv.cols(), conv.column_mean());
    let head_trace = model.head.forward_trace(&pooled)?;
    let raw = head_trace.last().unwrap();
    let (raw_offset, raw_length) = (raw.get(0, 0), raw.get(0, 1));
    let proposal = squash(raw_offset, raw_length, sv.keypoint_pos, cfg.use_offset);
    let mask = mapper_forward(&model.mapper, &proposal)?;
    let x_fg = pool_foreground_with(&sv.features, &mask, cfg.pool_norm);
    let x_bg = pool_background_with(&sv.features, &mask, cfg.pool_norm);
    let fg_trace = model.classifier.forward_trace(&Matrix::from_vec(1, x_fg.len(), x_fg.clone()))?;
    let bg_trace = model.classifier.forward_trace(&Matrix::from_vec(1, x_bg.len(), x_bg.clone()))?;
    let y_fg_hat = fg_trace.last().unwrap().row(0).to_vec();
    let y_bg_hat = bg_trace.last().unwrap().row(0).to_vec();

    let c_plus_1 = y_fg_hat.len();
    let mut y_fg = vec![0.0; c_plus_1];
    y_fg[target_class] = 1.0;
    let mut y_bg = vec![0.0; c_plus_1];
    y_bg[c_plus_1 - 1] = 1.0;
    let mut loss = cfg.beta * cross_entropy(&y_fg, &y_fg_hat)?;
    if cfg.use_bg_loss {
        loss += cross_entropy(&y_bg, &y_bg_hat)?;
    }
    Ok(LocalizerPass {
        proposal,
        mask,
        x_fg,
        x_bg,
        y_fg_hat,
        y_bg_hat,
        loss,
        raw_offset,
        raw_length,
        trunk_trace,
        head_trace,
        fg_trace,
        bg_trace,
    })
}

/// Scalar loss only; the finite-difference reference path.
pub fn localizer_loss(model: &LocalizerModel, sv: &ShortVideo, target_class: usize) -> Result<f64> {
    Ok(localizer_pass(model, sv, target_class)?.loss)
}

/// Parameter gradients for one labeled short video.
pub struct LocalizerGrads {
    pub trunk: Vec<f64>,
    pub head: Vec<f64>,
    pub classifier: Vec<f64>,
}

/// Backpropagates [`localizer_pass`]: the classifier gets both pooled
/// paths, the predictor is reached through the frozen mapper.
pub fn localizer_backward(
    model: &LocalizerModel,
    sv: &ShortVideo,
    target_class: usize,
    pass: &LocalizerPass,
) -> Result<LocalizerGrads> {
    let cfg = &model.config;
    let c_plus_1 = pass.y_fg_hat.len();
    let t_s = cfg.t_s;

    // Classifier: foreground path (weighted by beta).
    let mut up_fg = vec![0.0; c_plus_1];
    one_hot_ce_grad(&pass.y_fg_hat, target_class, cfg.beta, &mut up_fg);
    let up_fg = Matrix::from_vec(1, c_plus_1, up_fg);
    let (cls_grads_fg, dx_fg) = model.classifier.backward_from_trace(&pass.fg_trace, &up_fg)?;

    // Classifier: background path.
    let (cls_grads_bg, dx_bg) = if cfg.use_bg_loss {
        let mut up_bg = vec![0.0; c_plus_1];
        one_hot_ce_grad(&pass.y_bg_hat, c_plus_1 - 1, 1.0, &mut up_bg);
        let up_bg = Matrix::from_vec(1, c_plus_1, up_bg);
        model.classifier.backward_from_trace(&pass.bg_trace, &up_bg)?
    } else {
        (vec![0.0; model.classifier.param_count()], Matrix::zeros(1, dx_fg.cols()))
    };
    let mut classifier = cls_grads_fg;
    for (a, b) in classifier.iter_mut().zip(&cls_grads_bg) {
        *a += b;
    }

    // Pooling -> mask gradient.
    let dxf = dx_fg.row(0);
    let dxb = dx_bg.row(0);
    let mut dmask = vec![0.0; t_s];
    match cfg.pool_norm {
        PoolNorm::FrameCount => {
            let inv = 1.0 / t_s as f64;
            for t in 0..t_s {
                let xt = sv.features.row(t);
                dmask[t] = inv * (dot(xt, dxf) - dot(xt, dxb));
            }
        }
        PoolNorm::MaskMass => {
            let mass: f64 = pass.mask.values.iter().sum();
            let s_fg = mass.max(PROB_EPS);
            let s_bg = (t_s as f64 - mass).max(PROB_EPS);
            for t in 0..t_s {
                let xt = sv.features.row(t);
                let mut fg_term = 0.0;
                let mut bg_term = 0.0;
                for d in 0..xt.len() {
                    fg_term += dxf[d] * (xt[d] - pass.x_fg[d]);
                    bg_term += dxb[d] * (pass.x_bg[d] - xt[d]);
                }
                dmask[t] = fg_term / s_fg + bg_term / s_bg;
            }
        }
    }

    // Frozen mapper: parameter grads are zero, input grads flow.
    let mapper_in = Matrix::from_vec(1, 2, vec![pass.proposal.center, pass.proposal.length]);
    let up_mask = Matrix::from_vec(1, t_s, dmask);
    let (_, d_in) = model.mapper.backward(&mapper_in, &up_mask)?;
    let (d_center, d_length) = (d_in.get(0, 0), d_in.get(0, 1));

    // Squash derivatives; the center clamp zeroes the offset path when it
    // is saturated.
    let mut d_raw_offset = 0.0;
    if cfg.use_offset {
        let dp = pass.raw_offset.tanh() / 2.0;
        let center_pre_clamp = sv.keypoint_pos + dp;
        if (0.0..=1.0).contains(&center_pre_clamp) {
            let th = pass.raw_offset.tanh();
            d_raw_offset = d_center * 0.5 * (1.0 - th * th);
        }
    }
    let sig = 1.0 / (1.0 + (-pass.raw_length).exp());
    let d_raw_length = d_length * sig * (1.0 - sig);

    // Head and trunk.
    let up_head = Matrix::from_vec(1, 2, vec![d_raw_offset, d_raw_length]);
    let (head_grads, d_pooled) = model.head.backward_from_trace(&pass.head_trace, &up_head)?;
    let conv = pass.trunk_trace.last().unwrap();
    let inv_t = 1.0 / conv.rows() as f64;
    let up_trunk = Matrix::from_fn(conv.rows(), conv.cols(), |_, c| d_pooled.get(0, c) * inv_t);
    let (trunk_grads, _) = model.trunk.backward_from_trace(&pass.trunk_trace, &up_trunk)?;

    Ok(LocalizerGrads { trunk: trunk_grads, head: head_grads, classifier })
}

/// A short video paired with its category supervision.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub sv: ShortVideo,
    pub class_id: usize,
}

/// Labels short videos with the point annotation that falls inside their
/// span, nearest to the keypoint. Returns the labeled examples and the
/// count of spans with no annotation (skipped).
pub fn assign_training_labels(
    svs: Vec<ShortVideo>,
    points: &[crate::datagen::PointLabel],
) -> (Vec<TrainingExample>, usize) {
    let mut out = Vec::with_capacity(svs.len());
    let mut skipped = 0;
    for sv in svs {
        let best = points
            .iter()
            .filter(|p| p.t >= sv.origin.start && p.t <= sv.origin.end)
            .min_by_key(|p| (p.t.abs_diff(sv.keypoint_t), p.t));
        match best {
            Some(p) => out.push(TrainingExample { class_id: p.class_id, sv }),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Trains predictor and classifier through the frozen mapper with Adam,
/// one step per labeled short video. Returns the model and per-epoch mean
/// losses.
pub fn train_localizer(
    examples: &[TrainingExample],
    feature_dim: usize,
    num_classes: usize,
    mapper: Network,
    cfg: &LocalizerTrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(LocalizerModel, Vec<f64>)> {
    if examples.is_empty() {
        return Err(PtalError::Annotation("no labeled short videos to train on".into()));
    }
    let mut model = LocalizerModel::new(feature_dim, num_classes, mapper, cfg)?;
    let mut adam_trunk = AdamState::new(cfg.lr, model.trunk.param_count());
    let mut adam_head = AdamState::new(cfg.lr, model.head.param_count());
    let mut adam_cls = AdamState::new(cfg.lr, model.classifier.param_count());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = StdRng::seed_from_u64(cfg.seed ^ 0x10c);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let ex = &examples[i];
            let pass = localizer_pass(&model, &ex.sv, ex.class_id)?;
            if !pass.loss.is_finite() {
                return Err(PtalError::Training(format!(
                    "localizer loss diverged at epoch {epoch}"
                )));
            }
            total += pass.loss;
            let grads = localizer_backward(&model, &ex.sv, ex.class_id, &pass)?;
            adam_step(&mut adam_trunk, model.trunk.params_mut(), &grads.trunk)?;
            adam_step(&mut adam_head, model.head.params_mut(), &grads.head)?;
            adam_step(&mut adam_cls, model.classifier.params_mut(), &grads.classifier)?;
        }
        let mean = total / examples.len() as f64;
        epoch_losses.push(mean);
        progress(epoch, mean);
    }
    Ok((model, epoch_losses))
}

/// Classifier probabilities for a pooled feature vector.
pub fn classify(model: &LocalizerModel, pooled: &[f64]) -> Result<Vec<f64>> {
    let out = model
        .classifier
        .forward(&Matrix::from_vec(1, pooled.len(), pooled.to_vec()))?;
    Ok(out.row(0).to_vec())
}

// --- checkpointing ----------------------------------------------------------
//
// A localizer artifact is three concatenated network blocks
// (trunk, head, classifier); the first block's meta carries the training
// config next to the run config.

#[derive(Serialize, Deserialize)]
struct LocalizerMeta {
    run_config: serde_json::Value,
    train_config: LocalizerTrainConfig,
}

pub fn save_localizer(
    path: &Path,
    model: &LocalizerModel,
    run_config: serde_json::Value,
) -> Result<()> {
    let p = path.display().to_string();
    let meta = LocalizerMeta { run_config, train_config: model.config.clone() };
    let meta_json =
        serde_json::to_string(&meta).map_err(|e| PtalError::Json { path: p.clone(), source: e })?;
    let file = std::fs::File::create(path).map_err(|e| PtalError::io(p.clone(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let head_meta = CheckpointMeta { extra: model.config.t_s as u32, config_json: meta_json };
    write_network(&mut w, &model.trunk, &head_meta).map_err(|e| PtalError::io(p.clone(), e))?;
    write_network(&mut w, &model.head, &CheckpointMeta::default())
        .map_err(|e| PtalError::io(p.clone(), e))?;
    write_network(&mut w, &model.classifier, &CheckpointMeta::default())
        .map_err(|e| PtalError::io(p.clone(), e))?;
    use std::io::Write;
    w.flush().map_err(|e| PtalError::io(p, e))?;
    Ok(())
}

/// Loads a localizer checkpoint; the mapper is stored separately and must
/// be supplied.
pub fn load_localizer(path: &Path, mapper: Network) -> Result<LocalizerModel> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| PtalError::io(p.clone(), e))?;
    let mut r = std::io::BufReader::new(file);
    let (trunk, meta) = read_network(&mut r, &p)?;
    let (head, _) = read_network(&mut r, &p)?;
    let (classifier, _) = read_network(&mut r, &p)?;
    let mut probe = [0u8; 1];
    if matches!(r.read(&mut probe), Ok(n) if n > 0) {
        return Err(PtalError::format(p.clone(), "trailing bytes after localizer checkpoint"));
    }
    let parsed: LocalizerMeta = serde_json::from_str(&meta.config_json)
        .map_err(|e| PtalError::Json { path: p.clone(), source: e })?;
    let config = parsed.train_config;
    if !mapper.is_frozen() {
        return Err(PtalError::Config("mapper must be frozen".into()));
    }
    if mapper.out_dim() != config.t_s {
        return Err(PtalError::Dimension(format!(
            "mapper emits {} frames but localizer was trained with t_s = {}",
            mapper.out_dim(),
            config.t_s
        )));
    }
    Ok(LocalizerModel { trunk, head, classifier, mapper, config })
}
