use crate::data::Object;
use crate::detector::{encode_box, PriorBox};
use crate::error::{Error, Result};

/// Per-prior training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// 0 for background, `label + 1` for a matched object.
    pub labels: Vec<usize>,
    pub gt_index: Vec<Option<usize>>,
    /// Encoded offsets; zero for background priors.
    pub targets: Vec<[f64; 4]>,
}

impl MatchResult {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_positive(&self, prior: usize) -> bool {
        self.labels[prior] != 0
    }

    pub fn positive_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    pub fn num_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// Assigns ground truth to priors.
///
/// Every object claims its best-overlap prior (later objects win a shared
/// best prior); any other prior is positive when its best overlap reaches
/// `iou_threshold`. Ties resolve to the lowest index.
pub fn match_priors(priors: &[PriorBox], objects: &[Object], iou_threshold: f64) -> Result<MatchResult> {
    if priors.is_empty() {
        return Err(Error::dim("cannot match against an empty prior set"));
    }
    let n = priors.len();
    let mut labels = vec![0usize; n];
    let mut gt_index = vec![None; n];
    let mut targets = vec![[0.0f64; 4]; n];
    if objects.is_empty() {
        return Ok(MatchResult {
            labels,
            gt_index,
            targets,
        });
    }
    let corners: Vec<_> = priors.iter().map(PriorBox::to_corners).collect();
    let overlaps: Vec<Vec<f64>> = objects
        .iter()
        .map(|o| corners.iter().map(|p| o.bbox.iou_unchecked(p)).collect())
        .collect();

    let mut best_gt: Vec<(usize, f64)> = (0..n)
        .map(|p| {
            (0..objects.len()).fold((0, f64::NEG_INFINITY), |acc, g| {
                if overlaps[g][p] > acc.1 {
                    (g, overlaps[g][p])
                } else {
                    acc
                }
            })
        })
        .collect();
    for (g, row) in overlaps.iter().enumerate() {
        let best_prior = (0..n).fold(0, |acc, p| if row[p] > row[acc] { p } else { acc });
        best_gt[best_prior] = (g, f64::INFINITY);
    }
    for p in 0..n {
        let (g, ov) = best_gt[p];
        if ov >= iou_threshold {
            labels[p] = objects[g].label + 1;
            gt_index[p] = Some(g);
            targets[p] = encode_box(&objects[g].bbox, &priors[p]);
        }
    }
    Ok(MatchResult {
        labels,
        gt_index,
        targets,
    })
}
