use serde::{Deserialize, Serialize};

use crate::boxes::BBox;

use super::model::RawPrediction;
use super::priors::PriorBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Class id, background excluded (0-based).
    pub label: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k: usize,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.45,
            top_k: 100,
        }
    }
}

/// Center/log offsets of `gt` relative to `prior` (unit variances).
pub fn encode_box(gt: &BBox, prior: &PriorBox) -> [f64; 4] {
    let (cx, cy) = gt.center();
    [
        (cx - prior.cx) / prior.w,
        (cy - prior.cy) / prior.h,
        (gt.width() / prior.w).ln(),
        (gt.height() / prior.h).ln(),
    ]
}

pub fn decode_box(offsets: &[f64], prior: &PriorBox) -> BBox {
    BBox::from_center(
        prior.cx + offsets[0] * prior.w,
        prior.cy + offsets[1] * prior.h,
        prior.w * offsets[2].exp(),
        prior.h * offsets[3].exp(),
    )
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Greedy NMS over `(score, prior index, box)` candidates of one class.
fn nms(mut cands: Vec<(f64, usize, BBox)>, iou_thresh: f64) -> Vec<(f64, usize, BBox)> {
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<(f64, usize, BBox)> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| k.2.iou_unchecked(&c.2) <= iou_thresh) {
            kept.push(c);
        }
    }
    kept
}

/// Decodes offsets against priors, thresholds softmax scores, runs per-class
/// greedy NMS and keeps the `top_k` best detections overall.
pub fn decode_and_nms(raw: &RawPrediction, priors: &[PriorBox], params: &NmsParams) -> Vec<Detection> {
    debug_assert_eq!(raw.num_priors(), priors.len());
    let classes = raw.num_classes_with_background();
    let boxes: Vec<BBox> = priors
        .iter()
        .enumerate()
        .map(|(i, p)| decode_box(raw.offsets(i), p).clip_unit())
        .collect();
    let probs: Vec<Vec<f64>> = (0..priors.len()).map(|i| softmax(raw.logits(i))).collect();

    let mut all: Vec<(Detection, usize)> = Vec::new();
    for class in 1..classes {
        let cands: Vec<(f64, usize, BBox)> = (0..priors.len())
            .filter(|&i| probs[i][class] > params.score_thresh && boxes[i].is_proper())
            .map(|i| (probs[i][class], i, boxes[i]))
            .collect();
        for (score, idx, bbox) in nms(cands, params.nms_iou) {
            all.push((
                Detection {
                    label: class - 1,
                    score,
                    bbox,
                },
                idx,
            ));
        }
    }
    all.sort_by(|a, b| {
        b.0.score
            .total_cmp(&a.0.score)
            .then(a.0.label.cmp(&b.0.label))
            .then(a.1.cmp(&b.1))
    });
    all.truncate(params.top_k);
    all.into_iter().map(|(d, _)| d).collect()
}
