//! Proposal-to-mask mapper.
//!
//! A direct rectangular mask built from a `(center, length)` proposal is
//! not differentiable, so a small MLP is pre-trained on simulated pairs to
//! reproduce it, then frozen. During later training the soft mapper output
//! is used as-is; no hard threshold ever enters a loss.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{PtalError, Result};
use crate::mat::Matrix;
use crate::nn::{
    adam_step, binary_cross_entropy, binary_cross_entropy_grad, Activation, AdamState, LayerSpec,
    Network,
};

/// A candidate action location in normalized short-video coordinates:
/// `center` in `[0, 1]`, `length` in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub center: f64,
    pub length: f64,
}

impl Proposal {
    /// Left and right boundaries `center -+ length/2`, unclipped.
    pub fn boundaries(&self) -> (f64, f64) {
        (self.center - self.length / 2.0, self.center + self.length / 2.0)
    }

    /// Boundaries clipped into `[0, 1]`.
    pub fn clipped_boundaries(&self) -> (f64, f64) {
        let (a, b) = self.boundaries();
        (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
    }
}

/// Soft temporal mask over `t_s` frames, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMask {
    pub values: Vec<f64>,
}

/// One simulated training pair for the mapper.
#[derive(Debug, Clone, PartialEq)]
pub struct MapperPair {
    pub input: Proposal,
    pub target: Vec<f64>,
}

/// Analytic rectangular mask: frame `t` (coordinate `t/(t_s-1)`) is 1 iff
/// it lies inside the proposal interval. This is the non-differentiable
/// oracle the mapper learns to imitate.
pub fn mask_from_proposal(p: &Proposal, t_s: usize) -> Vec<f64> {
    let (ra, rb) = p.boundaries();
    (0..t_s)
        .map(|t| {
            let coord = t as f64 / (t_s - 1) as f64;
            if coord >= ra && coord <= rb {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Simulates `n` proposal/mask pairs: center ~ U(0,1), length ~ U(1/t_s, 1).
pub fn simulate_pairs(n: usize, t_s: usize, seed: u64) -> Vec<MapperPair> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let input = Proposal {
                center: rng.random_range(0.0..1.0),
                length: rng.random_range(1.0 / t_s as f64..1.0),
            };
            let target = mask_from_proposal(&input, t_s);
            MapperPair { input, target }
        })
        .collect()
}

/// Weighted per-pair mask loss: foreground and background frames averaged
/// separately; an empty side contributes zero.
pub fn mapper_loss(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut pos = 0.0;
    let mut neg = 0.0;
    let mut n_pos = 0.0;
    let mut n_neg = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if *t >= 0.5 {
            pos += binary_cross_entropy(*p, 1.0);
            n_pos += 1.0;
        } else {
            neg += binary_cross_entropy(*p, 0.0);
            n_neg += 1.0;
        }
    }
    let mut loss = 0.0;
    if n_pos > 0.0 {
        loss += pos / n_pos;
    }
    if n_neg > 0.0 {
        loss += neg / n_neg;
    }
    loss
}

/// Gradient of [`mapper_loss`] w.r.t. the predicted mask, written into `out`.
pub fn mapper_loss_grad(pred: &[f64], target: &[f64], out: &mut [f64]) {
    let n_pos = target.iter().filter(|t| **t >= 0.5).count() as f64;
    let n_neg = target.len() as f64 - n_pos;
    for ((g, p), t) in out.iter_mut().zip(pred).zip(target) {
        let (tt, w) = if *t >= 0.5 { (1.0, 1.0 / n_pos) } else { (0.0, 1.0 / n_neg) };
        *g = w * binary_cross_entropy_grad(*p, tt);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapperTrainConfig {
    pub t_s: usize,
    /// Hidden relu layer widths between the 2-dim input and the mask head.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Held-out pairs for the post-training fidelity gate.
    pub holdout: usize,
    pub min_accuracy: f64,
}

impl Default for MapperTrainConfig {
    fn default() -> Self {
        MapperTrainConfig {
            t_s: 64,
            hidden: vec![128, 128],
            lr: 1e-5,
            epochs: 30,
            batch: 16,
            seed: 7,
            holdout: 10_000,
            min_accuracy: 0.99,
        }
    }
}

/// Builds the mapper MLP: 2 -> hidden relu layers -> t_s sigmoid.
pub fn mapper_network(cfg: &MapperTrainConfig) -> Result<Network> {
    let mut layers = Vec::with_capacity(cfg.hidden.len() + 1);
    let mut in_dim = 2;
    for h in &cfg.hidden {
        layers.push(LayerSpec::dense(in_dim, *h, Activation::Relu));
        in_dim = *h;
    }
    layers.push(LayerSpec::dense(in_dim, cfg.t_s, Activation::Sigmoid));
    Network::new(layers, cfg.seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapperTrainReport {
    pub epoch_losses: Vec<f64>,
    pub holdout_accuracy: f64,
}

/// Trains the mapper on simulated pairs and freezes it.
///
/// After the last epoch the binarized output is compared against the
/// analytic mask on fresh held-out pairs; an accuracy below
/// `cfg.min_accuracy` is a training error.
pub fn train_mapper(
    pairs: &[MapperPair],
    cfg: &MapperTrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(Network, MapperTrainReport)> {
    if pairs.is_empty() {
        return Err(PtalError::Config("mapper needs at least one training pair".into()));
    }
    if pairs.iter().any(|p| p.target.len() != cfg.t_s) {
        return Err(PtalError::Dimension(format!(
            "pair target length does not match t_s = {}",
            cfg.t_s
        )));
    }
    let mut net = mapper_network(cfg)?;
    let mut adam = AdamState::new(cfg.lr, net.param_count());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = StdRng::seed_from_u64(cfg.seed ^ 0x5e_ed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grads = vec![0.0; net.param_count()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let mut input = Matrix::zeros(b, 2);
            for (r, &idx) in chunk.iter().enumerate() {
                input.set(r, 0, pairs[idx].input.center);
                input.set(r, 1, pairs[idx].input.length);
            }
            let trace = net.forward_trace(&input)?;
            let pred = trace.last().unwrap();
            let mut upstream = Matrix::zeros(b, cfg.t_s);
            let mut batch_loss = 0.0;
            for (r, &idx) in chunk.iter().enumerate() {
                let target = &pairs[idx].target;
                batch_loss += mapper_loss(pred.row(r), target);
                mapper_loss_grad(pred.row(r), target, upstream.row_mut(r));
            }
            // Per-pair losses averaged over the batch.
            let scale = 1.0 / b as f64;
            for g in upstream.data_mut() {
                *g *= scale;
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(PtalError::Training(format!(
                    "mapper loss diverged at epoch {epoch}"
                )));
            }
            total += batch_loss;
            batches += 1.0;
            net.backward_into(&trace, &upstream, &mut grads)?;
            adam_step(&mut adam, net.params_mut(), &grads)?;
        }
        let mean = total / batches;
        epoch_losses.push(mean);
        progress(epoch, mean);
    }

    net.freeze();
    let holdout = simulate_pairs(cfg.holdout, cfg.t_s, cfg.seed.wrapping_add(0x0ff5e7));
    let holdout_accuracy = mask_accuracy(&net, &holdout)?;
    let report = MapperTrainReport { epoch_losses, holdout_accuracy };
    if holdout_accuracy < cfg.min_accuracy {
        return Err(PtalError::Training(format!(
            "mapper held-out per-frame accuracy {holdout_accuracy:.4} below {:.2} \
             after {} epochs (final loss {:.4}); increase epochs or pairs",
            cfg.min_accuracy,
            cfg.epochs,
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok((net, report))
}

/// Per-frame accuracy of the thresholded (0.5) mapper output against the
/// pair targets.
pub fn mask_accuracy(net: &Network, pairs: &[MapperPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let t_s = net.out_dim();
    let mut correct = 0usize;
    let mut total = 0usize;
    // Batched forward keeps this fast for large holdouts.
    for chunk in pairs.chunks(512) {
        let mut input = Matrix::zeros(chunk.len(), 2);
        for (r, pair) in chunk.iter().enumerate() {
            input.set(r, 0, pair.input.center);
            input.set(r, 1, pair.input.length);
        }
        let pred = net.forward(&input)?;
        for (r, pair) in chunk.iter().enumerate() {
            for t in 0..t_s {
                let hard = if pred.get(r, t) >= 0.5 { 1.0 } else { 0.0 };
                if hard == pair.target[t] {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Differentiable forward pass for one proposal.
pub fn mapper_forward(net: &Network, p: &Proposal) -> Result<TemporalMask> {
    if net.in_dim() != 2 {
        return Err(PtalError::Dimension(format!(
            "mapper network expects 2 inputs, has {}",
            net.in_dim()
        )));
    }
    let input = Matrix::from_vec(1, 2, vec![p.center, p.length]);
    let out = net.forward(&input)?;
    Ok(TemporalMask { values: out.row(0).to_vec() })
}

/// Gradient of a scalar function of the mask w.r.t. `(center, length)`.
pub fn mapper_input_grad(net: &Network, p: &Proposal, upstream: &[f64]) -> Result<(f64, f64)> {
    let input = Matrix::from_vec(1, 2, vec![p.center, p.length]);
    let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec());
    let (_, gx) = net.backward(&input, &up)?;
    Ok((gx.get(0, 0), gx.get(0, 1)))
}
