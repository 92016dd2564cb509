use crate::detector::{softmax, RawPrediction};
use crate::error::{Error, Result};

use super::matching::MatchResult;

/// `0.5 u²` for `|u| < 1`, `|u| − 0.5` otherwise.
pub fn smooth_l1(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        0.5 * u * u
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(u: f64) -> f64 {
    if u.abs() < 1.0 {
        u
    } else {
        u.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub loc: f64,
    pub conf: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Priors contributing to the confidence term: all positives plus the
/// hardest negatives (by background cross-entropy, ties to lower index).
fn conf_set(raw: &RawPrediction, m: &MatchResult, neg_pos_ratio: usize) -> Vec<usize> {
    let npos = m.num_positives();
    let mut negs: Vec<(f64, usize)> = (0..m.len())
        .filter(|&p| !m.is_positive(p))
        .map(|p| {
            let l = raw.logits(p);
            (log_sum_exp(l) - l[0], p)
        })
        .collect();
    negs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let keep = (neg_pos_ratio * npos.max(1)).min(negs.len());
    let mut set: Vec<usize> = (0..m.len()).filter(|&p| m.is_positive(p)).collect();
    set.extend(negs[..keep].iter().map(|&(_, p)| p));
    set
}

fn check_aligned(raw: &RawPrediction, m: &MatchResult) -> Result<()> {
    if raw.num_priors() != m.len() {
        return Err(Error::dim(format!(
            "prediction has {} priors, match has {}",
            raw.num_priors(),
            m.len()
        )));
    }
    if let Some(&l) = m.labels.iter().find(|&&l| l >= raw.num_classes_with_background()) {
        return Err(Error::dim(format!("match label {l} exceeds prediction classes")));
    }
    Ok(())
}

/// Multibox loss `conf + α·loc`, both normalized by the positive count.
pub fn multibox_loss(raw: &RawPrediction, m: &MatchResult, alpha: f64, neg_pos_ratio: usize) -> Result<LossBreakdown> {
    Ok(multibox_loss_and_grad(raw, m, alpha, neg_pos_ratio)?.0)
}

/// Loss together with its gradient with respect to every raw output.
pub fn multibox_loss_and_grad(
    raw: &RawPrediction,
    m: &MatchResult,
    alpha: f64,
    neg_pos_ratio: usize,
) -> Result<(LossBreakdown, RawPrediction)> {
    check_aligned(raw, m)?;
    let norm = m.num_positives().max(1) as f64;
    let mut grad = raw.zeros_like();
    let classes = raw.num_classes_with_background();

    let mut loc = 0.0;
    for p in (0..m.len()).filter(|&p| m.is_positive(p)) {
        let pred = raw.offsets(p);
        let g = &mut grad.all_offsets_mut()[p * 4..p * 4 + 4];
        for d in 0..4 {
            let u = pred[d] - m.targets[p][d];
            loc += smooth_l1(u);
            g[d] = alpha * smooth_l1_grad(u) / norm;
        }
    }
    loc /= norm;

    let mut conf = 0.0;
    for p in conf_set(raw, m, neg_pos_ratio) {
        let l = raw.logits(p);
        let target = m.labels[p];
        conf += log_sum_exp(l) - l[target];
        let probs = softmax(l);
        let g = &mut grad.all_logits_mut()[p * classes..(p + 1) * classes];
        for c in 0..classes {
            let onehot = if c == target { 1.0 } else { 0.0 };
            g[c] = (probs[c] - onehot) / norm;
        }
    }
    conf /= norm;

    Ok((
        LossBreakdown {
            total: conf + alpha * loc,
            loc,
            conf,
        },
        grad,
    ))
}
