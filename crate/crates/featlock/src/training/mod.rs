//! Multibox training with SGD, applying the keyed transform on every pass.

mod gradcheck;
mod loss;
mod matching;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, Dataset};
use crate::detector::{Checkpoint, Gradients, Keying, Model};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keyed_transforms::SecretKey;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{multibox_loss, multibox_loss_and_grad, smooth_l1, smooth_l1_grad, LossBreakdown};
pub use matching::{match_priors, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPhase {
    pub iterations: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Piecewise-constant learning rate, phases run back to back.
    pub schedule: Vec<LrPhase>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Weight α of the localization term.
    pub loss_weight: f64,
    pub neg_pos_ratio: usize,
    pub iou_threshold: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: vec![
                LrPhase { iterations: 3000, lr: 1e-3 },
                LrPhase { iterations: 1000, lr: 1e-4 },
                LrPhase { iterations: 1000, lr: 1e-5 },
            ],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            loss_weight: 1.0,
            neg_pos_ratio: 3,
            iou_threshold: 0.5,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_iterations(&self) -> usize {
        self.schedule.iter().map(|p| p.iterations).sum()
    }

    /// Learning rate at 0-based iteration `t`; the last phase extends forever.
    pub fn lr_at(&self, t: usize) -> f64 {
        let mut end = 0;
        for p in &self.schedule {
            end += p.iterations;
            if t < end {
                return p.lr;
            }
        }
        self.schedule.last().map_or(0.0, |p| p.lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.iter().any(|p| !(p.lr > 0.0 && p.lr.is_finite())) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.loss_weight < 0.0 {
            return Err(Error::config("momentum must lie in [0, 1); decay and loss weight >= 0"));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::config("iou_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub loc: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// `iteration,lr,total,loc,conf`, iterations 1-based.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,total,loc,conf\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:.6},{:.6},{:.6}", r.iteration, r.lr, r.total, r.loc, r.conf);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// SplitMix64 finalizer over a few words.
fn mix(words: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        z = z.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Loss and gradients of one sample under `keying`.
pub fn sample_gradients(
    model: &Model,
    sample: &crate::data::Sample,
    keying: Option<&Keying>,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let trace = model.forward_trace(&sample.image, keying)?;
    let m = match_priors(model.priors(), &sample.objects, cfg.iou_threshold)?;
    let (loss, grad_raw) = multibox_loss_and_grad(&trace.raw, &m, cfg.loss_weight, cfg.neg_pos_ratio)?;
    Ok((loss, model.backward(&trace, &grad_raw, keying)))
}

/// Deterministic batch order: reshuffled every epoch from the seed.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(mix(&[seed, 0xba7c4])),
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

struct Sgd {
    velocity: Gradients,
}

impl Sgd {
    fn new(model: &Model) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
        }
    }

    /// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
    fn step(&mut self, model: &mut Model, grads: &Gradients, lr: f64, momentum: f64, decay: f64) {
        let (lr, mu, wd) = (lr as f32, momentum as f32, decay as f32);
        for ((layer, g), v) in model.layers_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            let pairs = layer
                .weight
                .iter_mut()
                .zip(g.weight.iter().zip(v.weight.iter_mut()))
                .chain(layer.bias.iter_mut().zip(g.bias.iter().zip(v.bias.iter_mut())));
            for (w, (gw, vw)) in pairs {
                *vw = mu * *vw + *gw + wd * *w;
                *w -= lr * *vw;
            }
        }
    }
}

/// Trains `model` on `dataset`, keyed with `key` when given.
pub fn train(model: Model, dataset: &Dataset, key: Option<&SecretKey>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg_model = model.config();
    let needs_key = !cfg_model.encrypted_sites.is_empty() || cfg_model.input_block_size.is_some();
    if needs_key && key.is_none() {
        return Err(Error::config(
            "model has protected sites; training requires the secret key",
        ));
    }
    let keying = key.map(|k| Keying::derive(cfg_model, k)).transpose()?;
    train_keyed(model, dataset, keying.as_ref(), key.map(SecretKey::fingerprint), cfg, Exec::default())
}

/// Training loop over resolved permutations.
pub fn train_keyed(
    mut model: Model,
    dataset: &Dataset,
    keying: Option<&Keying>,
    key_fingerprint: Option<String>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.classes.len() != model.config().num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model expects {}",
            dataset.classes.len(),
            model.config().num_classes
        )));
    }
    let total = cfg.total_iterations();
    if total > 0 && dataset.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let mut sampler = BatchSampler::new(dataset.len(), cfg.seed);
    let mut sgd = Sgd::new(&model);
    let mut log = TrainLog::default();

    for it in 0..total {
        let lr = cfg.lr_at(it);
        let batch = sampler.next_batch(cfg.batch_size);
        let results = exec.try_map_range(batch.len(), |slot| {
            let src = &dataset.samples[batch[slot]];
            let aug;
            let sample = if cfg.augment {
                aug = augment(src, mix(&[cfg.seed, it as u64, slot as u64]))?;
                &aug
            } else {
                src
            };
            sample_gradients(&model, sample, keying, cfg)
        });
        let results = match results {
            Ok(r) => r,
            Err(Error::Diverged { detail, .. }) => {
                return Err(Error::Diverged { iteration: it + 1, detail })
            }
            Err(e) => return Err(e),
        };

        let mut grads = Gradients::zeros_like(&model);
        let (mut tot, mut loc, mut conf) = (0.0, 0.0, 0.0);
        for (l, g) in &results {
            grads.add_assign(g);
            tot += l.total;
            loc += l.loc;
            conf += l.conf;
        }
        let n = results.len() as f64;
        let row = LogRow {
            iteration: it + 1,
            lr,
            total: tot / n,
            loc: loc / n,
            conf: conf / n,
        };
        let grads_finite = grads
            .layers
            .iter()
            .all(|g| g.weight.iter().chain(&g.bias).all(|v| v.is_finite()));
        if !row.total.is_finite() || !grads_finite {
            return Err(Error::Diverged {
                iteration: it + 1,
                detail: format!("loss {} (loc {}, conf {})", row.total, row.loc, row.conf),
            });
        }
        grads.scale(1.0 / n as f32);
        sgd.step(&mut model, &grads, lr, cfg.momentum, cfg.weight_decay);
        log.rows.push(row);
    }
    let checkpoint = Checkpoint::from_model(&model, cfg.seed, total, key_fingerprint);
    Ok(TrainOutcome {
        model,
        checkpoint,
        log,
    })
}
