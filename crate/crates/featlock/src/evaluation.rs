//! VOC-protocol detection scoring.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::data::Dataset;
use crate::detector::{decode_and_nms, Checkpoint, Detection, Keying, Model, NmsParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keyed_transforms::SecretKey;

/// Intersection over union of two corner-form boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    for bx in [a, b] {
        if !bx.is_proper() {
            return Err(Error::InvalidBox(format!("degenerate box {bx:?}")));
        }
    }
    Ok(a.iou_unchecked(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMethod {
    /// VOC2007 11-point interpolation.
    #[default]
    ElevenPoint,
    /// Area under the precision envelope (VOC2010+).
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub image: usize,
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub num_gt: usize,
    /// Set when the class has no non-difficult ground truth; `ap` is then 0.
    pub no_ground_truth: bool,
}

/// Per-detection outcome after greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Orders detections by descending score, then image id, then input index.
fn ranked(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].image.cmp(&dets[b].image))
            .then(a.cmp(&b))
    });
    order
}

fn interpolate(prec: &[f64], rec: &[f64], method: ApMethod) -> f64 {
    match method {
        ApMethod::ElevenPoint => (0..=10)
            .map(|i| {
                let t = i as f64 / 10.0;
                prec.iter()
                    .zip(rec)
                    .filter(|(_, &r)| r >= t)
                    .map(|(&p, _)| p)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0,
        ApMethod::Continuous => {
            let mut mrec = vec![0.0];
            mrec.extend_from_slice(rec);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend_from_slice(prec);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .filter(|&i| mrec[i] != mrec[i - 1])
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
    }
}

/// Average precision of one class.
///
/// Detections are matched greedily in descending score to the unmatched
/// ground truth of highest overlap in the same image; an overlap must exceed
/// `iou_thresh`. Matches to difficult ground truth are ignored.
pub fn average_precision(
    dets: &[ScoredBox],
    gts: &[Vec<GtBox>],
    iou_thresh: f64,
    method: ApMethod,
) -> ClassAp {
    let num_gt: usize = gts.iter().flatten().filter(|g| !g.difficult).count();
    if num_gt == 0 {
        return ClassAp {
            ap: 0.0,
            num_gt,
            no_ground_truth: true,
        };
    }
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prec = Vec::with_capacity(dets.len());
    let mut rec = Vec::with_capacity(dets.len());
    for idx in ranked(dets) {
        let d = &dets[idx];
        let outcome = match gts.get(d.image) {
            Some(img_gts) if !img_gts.is_empty() => {
                let (best, ov) = img_gts
                    .iter()
                    .enumerate()
                    .map(|(j, g)| (j, g.bbox.iou_unchecked(&d.bbox)))
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                if ov > iou_thresh {
                    if img_gts[best].difficult {
                        Outcome::Ignored
                    } else if !taken[d.image][best] {
                        taken[d.image][best] = true;
                        Outcome::Tp
                    } else {
                        Outcome::Fp
                    }
                } else {
                    Outcome::Fp
                }
            }
            _ => Outcome::Fp,
        };
        match outcome {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => {}
        }
        let denom = tp + fp;
        prec.push(if denom == 0 { 0.0 } else { tp as f64 / denom as f64 });
        rec.push(tp as f64 / num_gt as f64);
    }
    ClassAp {
        ap: interpolate(&prec, &rec, method),
        num_gt,
        no_ground_truth: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Baseline,
    Correct,
    Plain,
    Incorrect,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Baseline => "baseline",
            Protocol::Correct => "correct",
            Protocol::Plain => "plain",
            Protocol::Incorrect => "incorrect",
        })
    }
}

/// How the evaluator keys the model.
#[derive(Debug, Clone)]
pub enum KeyMode {
    Correct(SecretKey),
    Plain,
    Incorrect(SecretKey),
}

impl KeyMode {
    pub fn protocol(&self) -> Protocol {
        match self {
            KeyMode::Correct(_) => Protocol::Correct,
            KeyMode::Plain => Protocol::Plain,
            KeyMode::Incorrect(_) => Protocol::Incorrect,
        }
    }

    fn key(&self) -> Option<&SecretKey> {
        match self {
            KeyMode::Correct(k) | KeyMode::Incorrect(k) => Some(k),
            KeyMode::Plain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub class_names: Vec<String>,
    pub per_class_ap: Vec<ClassAp>,
    pub map_value: f64,
    pub num_images: usize,
    pub num_gt: usize,
    pub num_detections: usize,
}

impl EvalReport {
    /// `protocol,class,ap` rows followed by `protocol,mAP,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("protocol,class,ap\n");
        for (name, ap) in self.class_names.iter().zip(&self.per_class_ap) {
            let _ = writeln!(s, "{},{},{:.6}", self.protocol, name, ap.ap);
        }
        let _ = writeln!(s, "{},mAP,{:.6}", self.protocol, self.map_value);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub nms: NmsParams,
    pub iou_thresh: f64,
    pub method: ApMethod,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            nms: NmsParams::default(),
            iou_thresh: 0.5,
            method: ApMethod::ElevenPoint,
        }
    }
}

/// Scores per-image detections against a dataset's ground truth.
pub fn score_detections(
    detections: &[Vec<Detection>],
    dataset: &Dataset,
    protocol: Protocol,
    params: &EvalParams,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Evaluation("dataset is empty".into()));
    }
    if detections.len() != dataset.len() {
        return Err(Error::Evaluation("one detection list per image required".into()));
    }
    let num_classes = dataset.classes.len();
    let num_gt = dataset
        .samples
        .iter()
        .flat_map(|s| &s.objects)
        .filter(|o| !o.difficult)
        .count();
    if num_gt == 0 {
        return Err(Error::Evaluation("dataset has no ground truth".into()));
    }
    let mut per_class_ap = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let gts: Vec<Vec<GtBox>> = dataset
            .samples
            .iter()
            .map(|s| {
                s.objects
                    .iter()
                    .filter(|o| o.label == class)
                    .map(|o| GtBox {
                        bbox: o.bbox,
                        difficult: o.difficult,
                    })
                    .collect()
            })
            .collect();
        let dets: Vec<ScoredBox> = detections
            .iter()
            .enumerate()
            .flat_map(|(image, ds)| {
                ds.iter().filter(|d| d.label == class).map(move |d| ScoredBox {
                    image,
                    score: d.score,
                    bbox: d.bbox,
                })
            })
            .collect();
        per_class_ap.push(average_precision(&dets, &gts, params.iou_thresh, params.method));
    }
    let map_value = per_class_ap.iter().map(|c| c.ap).sum::<f64>() / num_classes as f64;
    Ok(EvalReport {
        protocol,
        class_names: dataset.classes.clone(),
        per_class_ap,
        map_value,
        num_images: dataset.len(),
        num_gt,
        num_detections: detections.iter().map(Vec::len).sum(),
    })
}

/// Runs the model over every image with `keying` and scores the detections.
pub fn evaluate_keyed(
    model: &Model,
    dataset: &Dataset,
    keying: Option<&Keying>,
    protocol: Protocol,
    params: &EvalParams,
    exec: Exec,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Evaluation("dataset is empty".into()));
    }
    if dataset.classes.len() != model.config().num_classes {
        return Err(Error::Evaluation(format!(
            "dataset has {} classes, model was built for {}",
            dataset.classes.len(),
            model.config().num_classes
        )));
    }
    let detections = exec.try_map_range(dataset.len(), |i| {
        let raw = model.forward_keyed(&dataset.samples[i].image, keying)?;
        Ok::<_, Error>(decode_and_nms(&raw, model.priors(), &params.nms))
    })?;
    score_detections(&detections, dataset, protocol, params)
}

/// Evaluates `model` under one key protocol.
pub fn evaluate(model: &Model, dataset: &Dataset, mode: &KeyMode) -> Result<EvalReport> {
    let keying = mode.key().map(|k| Keying::derive(model.config(), k)).transpose()?;
    evaluate_keyed(
        model,
        dataset,
        keying.as_ref(),
        mode.protocol(),
        &EvalParams::default(),
        Exec::default(),
    )
}

/// Evaluates a checkpoint. The correct key must match the stored fingerprint.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, dataset: &Dataset, mode: &KeyMode) -> Result<EvalReport> {
    if let KeyMode::Correct(k) = mode {
        match &ckpt.key_fingerprint {
            Some(fp) if *fp == k.fingerprint() => {}
            Some(_) => {
                return Err(Error::Evaluation(
                    "key does not match the checkpoint's key fingerprint".into(),
                ))
            }
            None => {
                return Err(Error::Evaluation(
                    "checkpoint was trained without a key; evaluate it in plain mode".into(),
                ))
            }
        }
    }
    evaluate(&ckpt.to_model()?, dataset, mode)
}
