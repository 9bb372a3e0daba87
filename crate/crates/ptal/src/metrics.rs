//! Detection metrics: temporal IoU, average precision with greedy
//! matching, mAP over IoU thresholds, and false-alarm statistics.
//!
//! A prediction counts as a true positive only when its class is correct
//! and its IoU with a still-unmatched ground truth of the same video
//! reaches the threshold. Matching is greedy down the score-ranked list
//! and injective on ground truths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Final localization output in original-video frame units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPrediction {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub class_id: usize,
    pub score: f64,
}

/// A ground-truth instance tagged with its video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub class_id: usize,
}

/// Intersection over union of two inclusive frame intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    debug_assert!(a.0 <= a.1 && b.0 <= b.1);
    let inter_start = a.0.max(b.0);
    let inter_end = a.1.min(b.1);
    if inter_start > inter_end {
        return 0.0;
    }
    let inter = (inter_end - inter_start + 1) as f64;
    let len_a = (a.1 - a.0 + 1) as f64;
    let len_b = (b.1 - b.0 + 1) as f64;
    inter / (len_a + len_b - inter)
}

/// Deterministic ranking: score descending, ties by earlier start, then
/// video id.
fn rank(preds: &[ActionPrediction]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&i, &j| {
        preds[j]
            .score
            .total_cmp(&preds[i].score)
            .then(preds[i].start.cmp(&preds[j].start))
            .then(preds[i].video_id.cmp(&preds[j].video_id))
    });
    idx
}

/// Greedy matching over the ranked list: each prediction takes the
/// highest-IoU unmatched ground truth of its class and video, provided
/// IoU >= threshold. Returns, in rank order, the matched gt index.
fn greedy_match(
    preds: &[ActionPrediction],
    gts: &[LabeledSegment],
    iou_thr: f64,
) -> Vec<Option<usize>> {
    let order = rank(preds);
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.class_id != p.class_id || g.video_id != p.video_id {
                continue;
            }
            let iou = temporal_iou((p.start, p.end), (g.start, g.end));
            if iou >= iou_thr {
                let better = match best {
                    None => true,
                    Some((_, b)) => iou > b,
                };
                if better {
                    best = Some((gi, iou));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                matches.push(Some(gi));
            }
            None => matches.push(None),
        }
    }
    matches
}

/// Average precision for a single class (inputs pre-filtered by class).
///
/// The precision envelope is made monotone non-increasing before the
/// all-point integration over recall. No ground truths for the class
/// yields 0.
pub fn average_precision(
    preds: &[ActionPrediction],
    gts: &[LabeledSegment],
    iou_thr: f64,
) -> f64 {
    if gts.is_empty() || preds.is_empty() {
        return 0.0;
    }
    let matches = greedy_match(preds, gts, iou_thr);
    let n_gt = gts.len() as f64;
    let mut precisions = Vec::with_capacity(matches.len());
    let mut recalls = Vec::with_capacity(matches.len());
    let mut tp = 0.0;
    for (k, m) in matches.iter().enumerate() {
        if m.is_some() {
            tp += 1.0;
        }
        precisions.push(tp / (k + 1) as f64);
        recalls.push(tp / n_gt);
    }
    // Monotone envelope from the right.
    for k in (0..precisions.len() - 1).rev() {
        if precisions[k] < precisions[k + 1] {
            precisions[k] = precisions[k + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..recalls.len() {
        if recalls[k] > prev_recall {
            ap += (recalls[k] - prev_recall) * precisions[k];
            prev_recall = recalls[k];
        }
    }
    ap
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanApResult {
    /// `ap[class][threshold_index]`, classes without ground truth hold 0.
    pub ap_per_class_per_iou: Vec<Vec<f64>>,
    /// Classes that actually have ground truths (included in means).
    pub classes_with_gt: Vec<usize>,
    pub map_per_iou: Vec<f64>,
    pub avg_map: f64,
}

/// mAP per IoU threshold (unweighted mean over classes with at least one
/// ground truth) plus the average over thresholds.
pub fn mean_ap(
    preds: &[ActionPrediction],
    gts: &[LabeledSegment],
    num_classes: usize,
    thresholds: &[f64],
) -> Result<MeanApResult> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(crate::error::PtalError::Config(
            "IoU thresholds must be non-empty and in (0, 1]".into(),
        ));
    }
    let per_class: Vec<(Vec<ActionPrediction>, Vec<LabeledSegment>)> = (0..num_classes)
        .map(|c| {
            (
                preds.iter().filter(|p| p.class_id == c).cloned().collect(),
                gts.iter().filter(|g| g.class_id == c).cloned().collect(),
            )
        })
        .collect();
    let ap_per_class_per_iou: Vec<Vec<f64>> = per_class
        .par_iter()
        .map(|(p, g)| {
            thresholds
                .iter()
                .map(|thr| average_precision(p, g, *thr))
                .collect()
        })
        .collect();
    let classes_with_gt: Vec<usize> =
        (0..num_classes).filter(|c| !per_class[*c].1.is_empty()).collect();
    let map_per_iou: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            if classes_with_gt.is_empty() {
                return 0.0;
            }
            classes_with_gt.iter().map(|c| ap_per_class_per_iou[*c][ti]).sum::<f64>()
                / classes_with_gt.len() as f64
        })
        .collect();
    let avg_map = map_per_iou.iter().sum::<f64>() / map_per_iou.len() as f64;
    Ok(MeanApResult { ap_per_class_per_iou, classes_with_gt, map_per_iou, avg_map })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub false_alarm: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Set when there were no predictions; the rates above default to 0.
    pub zero_predictions: bool,
}

/// Score-threshold-free statistics from the same greedy matching, all
/// classes pooled. `false_alarm` is computed as `1 - precision` so the
/// identity holds exactly.
pub fn detection_stats(
    preds: &[ActionPrediction],
    gts: &[LabeledSegment],
    iou_thr: f64,
) -> DetectionStats {
    if preds.is_empty() {
        return DetectionStats {
            false_alarm: 0.0,
            precision: 0.0,
            recall: 0.0,
            f_measure: 0.0,
            zero_predictions: true,
        };
    }
    let matches = greedy_match(preds, gts, iou_thr);
    let tp = matches.iter().filter(|m| m.is_some()).count() as f64;
    let n = preds.len() as f64;
    let precision = tp / n;
    let false_alarm = 1.0 - precision;
    let recall = if gts.is_empty() { 0.0 } else { tp / gts.len() as f64 };
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionStats { false_alarm, precision, recall, f_measure, zero_predictions: false }
}

/// Full evaluation artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresholds: Vec<f64>,
    pub ap_per_class_per_iou: Vec<Vec<f64>>,
    pub classes_with_gt: Vec<usize>,
    pub map_per_iou: Vec<f64>,
    pub avg_map: f64,
    /// IoU threshold the detection statistics are computed at.
    pub stats_iou: f64,
    pub false_alarm: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub zero_predictions: bool,
    pub num_predictions: usize,
    pub num_ground_truths: usize,
}

pub fn evaluate(
    preds: &[ActionPrediction],
    gts: &[LabeledSegment],
    num_classes: usize,
    thresholds: &[f64],
    stats_iou: f64,
) -> Result<EvalReport> {
    let map = mean_ap(preds, gts, num_classes, thresholds)?;
    let stats = detection_stats(preds, gts, stats_iou);
    Ok(EvalReport {
        iou_thresholds: thresholds.to_vec(),
        ap_per_class_per_iou: map.ap_per_class_per_iou,
        classes_with_gt: map.classes_with_gt,
        map_per_iou: map.map_per_iou,
        avg_map: map.avg_map,
        stats_iou,
        false_alarm: stats.false_alarm,
        precision: stats.precision,
        recall: stats.recall,
        f_measure: stats.f_measure,
        zero_predictions: stats.zero_predictions,
        num_predictions: preds.len(),
        num_ground_truths: gts.len(),
    })
}
