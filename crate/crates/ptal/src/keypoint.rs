//! Keypoint stage: detector training, heatmap smoothing, peak extraction,
//! and segmentation of videos into fixed-length short videos.
//!
//! The detector is a fully convolutional network producing a per-frame,
//! per-class key probability heatmap. Annotated `(t, class)` entries are
//! the positive set, every other entry of the `T x C` grid is negative,
//! and the two sets are averaged separately so the handful of positives is
//! not drowned out.

use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, PointLabel, Split, Video};
use crate::error::{PtalError, Result};
use crate::mat::Matrix;
use crate::nn::{
    adam_step, binary_cross_entropy, binary_cross_entropy_grad, Activation, AdamState, LayerSpec,
    Network,
};
use crate::savgol;

/// Per-frame, per-class key probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyHeatmap {
    pub probs: Matrix,
}

impl KeyHeatmap {
    pub fn frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// Class-wise max curve `m(t) = max_c probs[t, c]`.
    pub fn max_curve(&self) -> Vec<f64> {
        (0..self.probs.rows())
            .map(|t| self.probs.row(t).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// A peak of the smoothed heatmap, anchoring one action instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub t: usize,
    pub class_id: usize,
    pub prob: f64,
}

/// Where a short video came from in its source video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortVideoOrigin {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
}

/// A keypoint-centered slice of a video, resampled to a fixed length.
#[derive(Debug, Clone)]
pub struct ShortVideo {
    /// `T_s x D` resampled features.
    pub features: Matrix,
    /// Keypoint location in normalized short-video coordinates.
    pub keypoint_pos: f64,
    pub class_id: usize,
    /// Keypoint frame in original-video coordinates.
    pub keypoint_t: usize,
    pub keypoint_prob: f64,
    pub origin: ShortVideoOrigin,
}

/// Weighted keypoint loss: positives and negatives averaged separately.
pub fn keypoint_loss(heatmap: &KeyHeatmap, labels: &[PointLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(PtalError::Annotation("keypoint loss needs at least one label".into()));
    }
    let (t_len, c_len) = (heatmap.frames(), heatmap.classes());
    for l in labels {
        if l.t >= t_len || l.class_id >= c_len {
            return Err(PtalError::Annotation(format!(
                "label at t={}, class={} outside {t_len}x{c_len} heatmap",
                l.t, l.class_id
            )));
        }
    }
    let mut positive = Matrix::zeros(t_len, c_len);
    for l in labels {
        positive.set(l.t, l.class_id, 1.0);
    }
    let n_pos: f64 = positive.data().iter().sum();
    let n_neg = (t_len * c_len) as f64 - n_pos;
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    for (p, t) in heatmap.probs.data().iter().zip(positive.data()) {
        if *t == 1.0 {
            pos_sum += binary_cross_entropy(*p, 1.0);
        } else {
            neg_sum += binary_cross_entropy(*p, 0.0);
        }
    }
    let mut loss = pos_sum / n_pos;
    if n_neg > 0.0 {
        loss += neg_sum / n_neg;
    }
    Ok(loss)
}

/// Gradient of [`keypoint_loss`] w.r.t. every heatmap entry.
fn keypoint_loss_grad(heatmap: &KeyHeatmap, labels: &[PointLabel]) -> Matrix {
    let (t_len, c_len) = (heatmap.frames(), heatmap.classes());
    let mut positive = Matrix::zeros(t_len, c_len);
    for l in labels {
        positive.set(l.t, l.class_id, 1.0);
    }
    let n_pos: f64 = positive.data().iter().sum();
    let n_neg = (t_len * c_len) as f64 - n_pos;
    let mut grad = Matrix::zeros(t_len, c_len);
    for i in 0..t_len * c_len {
        let p = heatmap.probs.data()[i];
        let t = positive.data()[i];
        let w = if t == 1.0 { 1.0 / n_pos } else { 1.0 / n_neg };
        grad.data_mut()[i] = w * binary_cross_entropy_grad(p, t);
    }
    grad
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointTrainConfig {
    pub hidden: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for KeypointTrainConfig {
    fn default() -> Self {
        KeypointTrainConfig { hidden: 64, kernel: 3, epochs: 50, lr: 1e-4, seed: 7 }
    }
}

/// Builds the detector: conv1d(D -> hidden, relu) -> conv1d(hidden -> C, sigmoid).
pub fn detector_network(feature_dim: usize, num_classes: usize, cfg: &KeypointTrainConfig) -> Result<Network> {
    Network::new(
        vec![
            LayerSpec::conv1d(feature_dim, cfg.hidden, cfg.kernel, Activation::Relu),
            LayerSpec::conv1d(cfg.hidden, num_classes, cfg.kernel, Activation::Sigmoid),
        ],
        cfg.seed,
    )
}

/// Trains the keypoint detector on the train split with Adam, full-batch
/// per video. Returns the network and the mean loss per epoch.
pub fn train_keypoint_detector(
    corpus: &Corpus,
    cfg: &KeypointTrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(Network, Vec<f64>)> {
    let videos: Vec<&Video> = corpus
        .split(Split::Train)
        .filter(|v| !v.points.is_empty())
        .collect();
    if videos.is_empty() {
        return Err(PtalError::Annotation("no labeled training videos".into()));
    }
    let mut net = detector_network(corpus.feature_dim(), corpus.num_classes(), cfg)?;
    let mut adam = AdamState::new(cfg.lr, net.param_count());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for video in &videos {
            let trace = net.forward_trace(&video.features)?;
            let heatmap = KeyHeatmap { probs: trace.last().unwrap().clone() };
            let loss = keypoint_loss(&heatmap, &video.points)?;
            if !loss.is_finite() {
                return Err(PtalError::Training(format!(
                    "keypoint loss diverged at epoch {epoch} on {}",
                    video.id
                )));
            }
            total += loss;
            let upstream = keypoint_loss_grad(&heatmap, &video.points);
            let (grads, _) = net.backward_from_trace(&trace, &upstream)?;
            adam_step(&mut adam, net.params_mut(), &grads)?;
        }
        let mean = total / videos.len() as f64;
        epoch_losses.push(mean);
        progress(epoch, mean);
    }
    Ok((net, epoch_losses))
}

/// Runs the detector over one video.
pub fn predict_heatmap(net: &Network, features: &Matrix) -> Result<KeyHeatmap> {
    Ok(KeyHeatmap { probs: net.forward(features)? })
}

/// Savitzky-Golay smoothing along time, per class, clamped back to `[0, 1]`.
/// A window longer than the video falls back to the identity.
pub fn smooth_heatmap(heatmap: &KeyHeatmap, window: usize, order: usize) -> Result<KeyHeatmap> {
    let (t_len, c_len) = (heatmap.frames(), heatmap.classes());
    let mut out = Matrix::zeros(t_len, c_len);
    for c in 0..c_len {
        let series: Vec<f64> = (0..t_len).map(|t| heatmap.probs.get(t, c)).collect();
        let smoothed = savgol::smooth_series(&series, window, order)?;
        for (t, v) in smoothed.into_iter().enumerate() {
            out.set(t, c, v.clamp(0.0, 1.0));
        }
    }
    Ok(KeyHeatmap { probs: out })
}

/// Extracts anchor keypoints from the class-wise max curve.
///
/// Frame `t` is kept iff `m(t) > theta`, `m(t) > m(t-1)` and
/// `m(t) >= m(t+1)`; boundary frames compare only to their existing
/// neighbor. On a plateau of equal values the strict-left/loose-right
/// asymmetry keeps exactly the leftmost frame. The class is the argmax
/// over classes at the kept frame.
pub fn extract_keypoints(heatmap: &KeyHeatmap, theta: f64) -> Result<Vec<Keypoint>> {
    if !(0.0..1.0).contains(&theta) {
        return Err(PtalError::Config(format!("theta must be in [0,1), got {theta}")));
    }
    let m = heatmap.max_curve();
    let t_len = m.len();
    let mut out = Vec::new();
    for t in 0..t_len {
        if m[t] <= theta {
            continue;
        }
        let left_ok = t == 0 || m[t] > m[t - 1];
        let right_ok = t + 1 == t_len || m[t] >= m[t + 1];
        if left_ok && right_ok {
            let row = heatmap.probs.row(t);
            let class_id = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .unwrap();
            out.push(Keypoint { t, class_id, prob: m[t] });
        }
    }
    Ok(out)
}

/// Linear resampling of a `span x D` slice to `t_s` rows. Output row `i`
/// samples source position `i * (span-1) / (t_s-1)`; a single source row
/// broadcasts.
pub fn resample(features: &Matrix, t_s: usize) -> Result<Matrix> {
    if t_s < 2 {
        return Err(PtalError::Config(format!("short-video length must be >= 2, got {t_s}")));
    }
    let span = features.rows();
    if span == 0 {
        return Err(PtalError::Dimension("cannot resample an empty span".into()));
    }
    let d = features.cols();
    let mut out = Matrix::zeros(t_s, d);
    for i in 0..t_s {
        let pos = if span == 1 {
            0.0
        } else {
            i as f64 * (span - 1) as f64 / (t_s - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(span - 1);
        let frac = pos - lo as f64;
        let row_lo = features.row(lo);
        let row_hi = features.row(hi);
        let out_row = out.row_mut(i);
        for j in 0..d {
            out_row[j] = (1.0 - frac) * row_lo[j] + frac * row_hi[j];
        }
    }
    Ok(out)
}

/// Splits a video into one short video per keypoint.
///
/// Keypoint `j` spans `[p_{j-1}+1, p_{j+1}-1]`; the first keypoint's span
/// starts at frame 0 and the last one's ends at `T-1`. Each span is
/// resampled to `t_s` frames and the keypoint position is normalized into
/// `[0, 1]` within its span.
pub fn segment_video(
    video_id: &str,
    features: &Matrix,
    keypoints: &[Keypoint],
    t_s: usize,
) -> Result<Vec<ShortVideo>> {
    if keypoints.is_empty() {
        return Ok(Vec::new());
    }
    let t_len = features.rows();
    for w in keypoints.windows(2) {
        if w[0].t >= w[1].t {
            return Err(PtalError::Annotation("keypoints must be strictly increasing in t".into()));
        }
    }
    let mut out = Vec::with_capacity(keypoints.len());
    for (j, kp) in keypoints.iter().enumerate() {
        let start = if j == 0 { 0 } else { keypoints[j - 1].t + 1 };
        let end = if j + 1 == keypoints.len() { t_len - 1 } else { keypoints[j + 1].t - 1 };
        debug_assert!(start <= kp.t && kp.t <= end);
        let span = Matrix::from_fn(end - start + 1, features.cols(), |r, c| {
            features.get(start + r, c)
        });
        let keypoint_pos = if end == start {
            0.5
        } else {
            (kp.t - start) as f64 / (end - start) as f64
        };
        out.push(ShortVideo {
            features: resample(&span, t_s)?,
            keypoint_pos,
            class_id: kp.class_id,
            keypoint_t: kp.t,
            keypoint_prob: kp.prob,
            origin: ShortVideoOrigin { video_id: video_id.to_string(), start, end },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{attach_point_labels, generate_corpus, PointDistribution, SyntheticConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn heatmap_from(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> KeyHeatmap {
        KeyHeatmap { probs: Matrix::from_fn(rows, cols, f) }
    }

    #[test]
    fn perfect_heatmap_loss_is_clamp_residual() {
        let labels = vec![PointLabel { t: 3, class_id: 1 }, PointLabel { t: 8, class_id: 0 }];
        let h = heatmap_from(16, 2, |t, c| {
            if (t == 3 && c == 1) || (t == 8 && c == 0) { 1.0 } else { 0.0 }
        });
        let loss = keypoint_loss(&h, &labels).unwrap();
        assert!(loss <= 2e-7, "loss {loss}");
    }

    #[test]
    fn uniform_half_heatmap_loss_is_two_ln_two() {
        let labels = vec![PointLabel { t: 1, class_id: 0 }];
        let h = heatmap_from(10, 3, |_, _| 0.5);
        let loss = keypoint_loss(&h, &labels).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    /// Naive double-loop re-evaluation of the weighted loss.
    fn naive_keypoint_loss(h: &KeyHeatmap, labels: &[PointLabel]) -> f64 {
        let mut pos = 0.0;
        let mut neg = 0.0;
        let mut n_pos = 0.0;
        let mut n_neg = 0.0;
        for t in 0..h.frames() {
            for c in 0..h.classes() {
                let is_pos = labels.iter().any(|l| l.t == t && l.class_id == c);
                let p = h.probs.get(t, c);
                if is_pos {
                    pos += -p.max(1e-7).ln();
                    n_pos += 1.0;
                } else {
                    neg += -(1.0 - p).max(1e-7).ln();
                    n_neg += 1.0;
                }
            }
        }
        pos / n_pos + neg / n_neg
    }

    #[test]
    fn random_heatmap_matches_naive_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let t_len = rng.random_range(4..30);
            let c_len = rng.random_range(1..6);
            let h = heatmap_from(t_len, c_len, |_, _| rng.random_range(0.0..1.0));
            let n_labels = rng.random_range(1..5);
            let labels: Vec<PointLabel> = (0..n_labels)
                .map(|_| PointLabel {
                    t: rng.random_range(0..t_len),
                    class_id: rng.random_range(0..c_len),
                })
                .collect();
            let got = keypoint_loss(&h, &labels).unwrap();
            let expect = naive_keypoint_loss(&h, &labels);
            assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn loss_is_permutation_invariant_in_label_order() {
        let h = heatmap_from(12, 3, |t, c| ((t * 3 + c) % 7) as f64 / 7.0);
        let labels = vec![
            PointLabel { t: 2, class_id: 0 },
            PointLabel { t: 7, class_id: 2 },
            PointLabel { t: 9, class_id: 1 },
        ];
        let mut rev = labels.clone();
        rev.reverse();
        assert_eq!(keypoint_loss(&h, &labels).unwrap(), keypoint_loss(&h, &rev).unwrap());
    }

    #[test]
    fn empty_labels_are_an_annotation_error() {
        let h = heatmap_from(4, 2, |_, _| 0.5);
        assert!(matches!(
            keypoint_loss(&h, &[]),
            Err(crate::error::PtalError::Annotation(_))
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        let h = heatmap_from(8, 2, |_, _| rng.random_range(0.05..0.95));
        let labels = vec![PointLabel { t: 1, class_id: 0 }, PointLabel { t: 5, class_id: 1 }];
        let grad = keypoint_loss_grad(&h, &labels);
        let eps = 1e-6;
        for t in 0..8 {
            for c in 0..2 {
                let mut hp = h.clone();
                hp.probs.set(t, c, h.probs.get(t, c) + eps);
                let mut hm = h.clone();
                hm.probs.set(t, c, h.probs.get(t, c) - eps);
                let fd = (keypoint_loss(&hp, &labels).unwrap()
                    - keypoint_loss(&hm, &labels).unwrap())
                    / (2.0 * eps);
                let a = grad.get(t, c);
                assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_detector() {
        let mut cfg = SyntheticConfig { num_videos: 4, ..SyntheticConfig::default() };
        cfg.train_fraction = 1.0;
        let mut corpus = generate_corpus(&cfg).unwrap();
        attach_point_labels(&mut corpus, PointDistribution::Gaussian, 1);
        let tc = KeypointTrainConfig { epochs: 0, ..KeypointTrainConfig::default() };
        let (net, losses) = train_keypoint_detector(&corpus, &tc, |_, _| {}).unwrap();
        let fresh = detector_network(corpus.feature_dim(), corpus.num_classes(), &tc).unwrap();
        assert_eq!(net.params(), fresh.params());
        assert!(losses.is_empty());
    }

    #[test]
    fn padding_extra_empty_classes_keeps_per_entry_terms() {
        // Detector with C outputs vs 2C outputs whose first-C channel
        // weights are identical: positive term and the original-class
        // negative terms must match.
        let d = 6;
        let c = 3;
        let cfg = KeypointTrainConfig::default();
        let small = detector_network(d, c, &cfg).unwrap();
        let big = detector_network(d, 2 * c, &cfg).unwrap();
        // Copy layer-0 weights and the first C output channels of layer 1.
        let mut big_params = big.params().to_vec();
        let r0 = small.layer_range(0);
        big_params[r0.clone()].copy_from_slice(&small.params()[r0.clone()]);
        let r1s = small.layer_range(1);
        let small_l1 = &small.params()[r1s];
        let r1b = big.layer_range(1);
        let kernel = 3;
        let hidden = cfg.hidden;
        // conv weights are (out, in, k): channel o occupies in*k values.
        for o in 0..c {
            let src = &small_l1[o * hidden * kernel..(o + 1) * hidden * kernel];
            big_params[r1b.start + o * hidden * kernel..r1b.start + (o + 1) * hidden * kernel]
                .copy_from_slice(src);
        }
        // Biases live after all weights.
        let small_bias_off = c * hidden * kernel;
        let big_bias_off = 2 * c * hidden * kernel;
        for o in 0..c {
            big_params[r1b.start + big_bias_off + o] = small_l1[small_bias_off + o];
        }
        let big = Network::from_parts(big.layers().to_vec(), big_params, 0).unwrap();

        let mut rng = StdRng::seed_from_u64(17);
        let x = Matrix::from_fn(20, d, |_, _| rng.random_range(-1.0..1.0));
        let hs = KeyHeatmap { probs: small.forward(&x).unwrap() };
        let hb = KeyHeatmap { probs: big.forward(&x).unwrap() };
        let labels = vec![PointLabel { t: 4, class_id: 1 }, PointLabel { t: 12, class_id: 2 }];

        // Identical per-entry outputs on the original classes.
        for t in 0..20 {
            for cc in 0..c {
                assert!((hs.probs.get(t, cc) - hb.probs.get(t, cc)).abs() < 1e-9);
            }
        }
        // Positive sums identical (all positives live in the original classes).
        let pos_small: f64 = labels.iter().map(|l| binary_cross_entropy(hs.probs.get(l.t, l.class_id), 1.0)).sum();
        let pos_big: f64 = labels.iter().map(|l| binary_cross_entropy(hb.probs.get(l.t, l.class_id), 1.0)).sum();
        assert!((pos_small - pos_big).abs() < 1e-9);
    }

    #[test]
    fn constant_row_is_unchanged_by_smoothing() {
        let h = heatmap_from(30, 2, |_, c| if c == 0 { 0.3 } else { 0.8 });
        for (w, o) in [(5, 2), (7, 2), (9, 3)] {
            let s = smooth_heatmap(&h, w, o).unwrap();
            for t in 0..30 {
                assert!((s.probs.get(t, 0) - 0.3).abs() < 1e-12);
                assert!((s.probs.get(t, 1) - 0.8).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_clamps_into_unit_interval() {
        // A sharp step overshoots under a quadratic fit; clamping must cap it.
        let h = heatmap_from(40, 1, |t, _| if (10..30).contains(&t) { 1.0 } else { 0.0 });
        let s = smooth_heatmap(&h, 5, 2).unwrap();
        for v in s.probs.data() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn triangular_bump_gives_one_keypoint_at_its_apex() {
        let h = heatmap_from(15, 1, |t, _| {
            let d = (t as f64 - 7.0).abs();
            (0.9 - 0.1 * d).max(0.0)
        });
        let kps = extract_keypoints(&h, 0.15).unwrap();
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 7);
        assert_eq!(kps[0].class_id, 0);
        assert!((kps[0].prob - 0.9).abs() < 1e-12);
    }

    #[test]
    fn all_below_theta_gives_no_keypoints() {
        let h = heatmap_from(20, 3, |_, _| 0.1);
        assert!(extract_keypoints(&h, 0.15).unwrap().is_empty());
    }

    #[test]
    fn plateau_keeps_only_the_leftmost_frame() {
        let h = heatmap_from(12, 1, |t, _| if (4..8).contains(&t) { 0.7 } else { 0.1 });
        let kps = extract_keypoints(&h, 0.15).unwrap();
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].t, 4);
    }

    /// Brute-force scan applying the peak rule frame by frame.
    fn brute_force_peaks(h: &KeyHeatmap, theta: f64) -> Vec<(usize, usize, f64)> {
        let t_len = h.frames();
        let m: Vec<f64> = (0..t_len)
            .map(|t| {
                (0..h.classes())
                    .map(|c| h.probs.get(t, c))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut out = Vec::new();
        for t in 0..t_len {
            if !(m[t] > theta) {
                continue;
            }
            if t > 0 && !(m[t] > m[t - 1]) {
                continue;
            }
            if t + 1 < t_len && !(m[t] >= m[t + 1]) {
                continue;
            }
            let mut best_c = 0;
            for c in 0..h.classes() {
                if h.probs.get(t, c) > h.probs.get(t, best_c) {
                    best_c = c;
                }
            }
            out.push((t, best_c, m[t]));
        }
        out
    }

    #[test]
    fn extraction_matches_brute_force_on_random_heatmaps() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..200 {
            let t_len = rng.random_range(1..40);
            let c_len = rng.random_range(1..4);
            // Quantized values so plateaus actually occur.
            let h = heatmap_from(t_len, c_len, |_, _| {
                (rng.random_range(0..6) as f64) / 5.0 * 0.9
            });
            let theta = rng.random_range(0.0..0.9);
            let got: Vec<(usize, usize, f64)> = extract_keypoints(&h, theta)
                .unwrap()
                .into_iter()
                .map(|k| (k.t, k.class_id, k.prob))
                .collect();
            assert_eq!(got, brute_force_peaks(&h, theta));
        }
    }

    #[test]
    fn keypoints_are_strictly_increasing_and_locally_maximal() {
        let mut rng = StdRng::seed_from_u64(123);
        let h = heatmap_from(64, 3, |_, _| rng.random_range(0.0..1.0));
        let kps = extract_keypoints(&h, 0.1).unwrap();
        let m = h.max_curve();
        for w in kps.windows(2) {
            assert!(w[0].t < w[1].t);
        }
        for k in &kps {
            if k.t > 0 {
                assert!(m[k.t] > m[k.t - 1]);
            }
            if k.t + 1 < 64 {
                assert!(m[k.t] >= m[k.t + 1]);
            }
        }
    }

    #[test]
    fn single_keypoint_spans_the_whole_video() {
        let features = Matrix::zeros(256, 4);
        let kps = vec![Keypoint { t: 50, class_id: 0, prob: 0.9 }];
        let svs = segment_video("v", &features, &kps, 64).unwrap();
        assert_eq!(svs.len(), 1);
        assert_eq!(svs[0].origin.start, 0);
        assert_eq!(svs[0].origin.end, 255);
        assert!((svs[0].keypoint_pos - 50.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn middle_keypoint_uses_neighbor_bounds() {
        let features = Matrix::zeros(128, 4);
        let kps = vec![
            Keypoint { t: 10, class_id: 0, prob: 0.9 },
            Keypoint { t: 50, class_id: 1, prob: 0.8 },
            Keypoint { t: 90, class_id: 2, prob: 0.7 },
        ];
        let svs = segment_video("v", &features, &kps, 64).unwrap();
        assert_eq!(svs[1].origin.start, 11);
        assert_eq!(svs[1].origin.end, 89);
        assert_eq!(svs[0].origin.start, 0);
        assert_eq!(svs[0].origin.end, 49);
        assert_eq!(svs[2].origin.start, 51);
        assert_eq!(svs[2].origin.end, 127);
    }

    #[test]
    fn tight_keypoints_produce_valid_spans_matching_the_formula() {
        let features = Matrix::zeros(64, 2);
        let kps = vec![
            Keypoint { t: 20, class_id: 0, prob: 0.9 },
            Keypoint { t: 22, class_id: 0, prob: 0.8 },
            Keypoint { t: 24, class_id: 0, prob: 0.7 },
        ];
        let svs = segment_video("v", &features, &kps, 8).unwrap();
        assert_eq!(svs[1].origin.start, 21);
        assert_eq!(svs[1].origin.end, 23);
        for (j, sv) in svs.iter().enumerate() {
            assert!(sv.origin.start <= kps[j].t && kps[j].t <= sv.origin.end);
        }
    }

    #[test]
    fn empty_keypoints_give_empty_short_videos() {
        let features = Matrix::zeros(32, 2);
        assert!(segment_video("v", &features, &[], 16).unwrap().is_empty());
    }

    #[test]
    fn resample_identity_when_span_equals_target() {
        let mut rng = StdRng::seed_from_u64(3);
        let m = Matrix::from_fn(16, 3, |_, _| rng.random_range(-1.0..1.0));
        let out = resample(&m, 16).unwrap();
        for (a, b) in out.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_keeps_constants_and_broadcasts_single_rows() {
        let m = Matrix::from_fn(5, 2, |_, c| c as f64 + 1.0);
        let out = resample(&m, 11).unwrap();
        for r in 0..11 {
            assert_eq!(out.row(r), &[1.0, 2.0]);
        }
        let single = Matrix::from_vec(1, 2, vec![0.25, -0.5]);
        let out = resample(&single, 4).unwrap();
        for r in 0..4 {
            assert_eq!(out.row(r), &[0.25, -0.5]);
        }
    }

    #[test]
    fn resample_reproduces_linear_features_in_closed_form() {
        // Feature row t = (2t, -t): resampled row i must be linear in the
        // source position i*(span-1)/(t_s-1).
        let span = 9;
        let t_s = 33;
        let m = Matrix::from_fn(span, 2, |t, c| if c == 0 { 2.0 * t as f64 } else { -(t as f64) });
        let out = resample(&m, t_s).unwrap();
        for i in 0..t_s {
            let pos = i as f64 * (span - 1) as f64 / (t_s - 1) as f64;
            assert!((out.get(i, 0) - 2.0 * pos).abs() < 1e-12);
            assert!((out.get(i, 1) + pos).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_tiny_targets() {
        let m = Matrix::zeros(4, 2);
        assert!(matches!(resample(&m, 1), Err(crate::error::PtalError::Config(_))));
    }

    #[test]
    fn detector_learns_annotated_frames_on_clean_corpus() {
        let cfg = SyntheticConfig {
            num_videos: 12,
            noise_sigma: 0.0,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let mut corpus = generate_corpus(&cfg).unwrap();
        attach_point_labels(&mut corpus, PointDistribution::Gaussian, 7);
        let tc = KeypointTrainConfig { epochs: 50, ..KeypointTrainConfig::default() };
        let (net, losses) = train_keypoint_detector(&corpus, &tc, |_, _| {}).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap(), "loss must drop");
        // Held-out annotated frames must be hot.
        let theta = 0.15;
        for video in corpus.split(Split::Test) {
            let heatmap = predict_heatmap(&net, &video.features).unwrap();
            for p in &video.points {
                assert!(
                    heatmap.probs.get(p.t, p.class_id) > theta,
                    "video {} t {} class {}: prob {}",
                    video.id,
                    p.t,
                    p.class_id,
                    heatmap.probs.get(p.t, p.class_id)
                );
            }
        }
    }
}
