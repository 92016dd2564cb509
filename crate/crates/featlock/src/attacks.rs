//! Unauthorized-access protocols and protection sweeps.
//!
//! `run_plain` and `run_wrong_keys` take only a checkpoint: the true key is
//! never an argument, so neither attack can read it.

use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::detector::{build_model, Checkpoint, DetectorConfig, Keying};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, evaluate_keyed, EvalParams, EvalReport, KeyMode, Protocol};
use crate::keyed_transforms::SecretKey;
use crate::training::{train, TrainConfig, TrainOutcome};
use crate::Exec;

pub const DEFAULT_WRONG_KEYS: usize = 20;
const WRONG_KEY_LEN: usize = 16;

/// What a row of an attack table protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTarget {
    /// Unprotected model trained with the same recipe.
    Baseline,
    /// Channel permutation at one 1-based feature-map site.
    Site(usize),
    /// Block-wise pixel shuffling of the input with block size M.
    Block(usize),
}

impl fmt::Display for AttackTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackTarget::Baseline => f.write_str("baseline"),
            AttackTarget::Site(s) => write!(f, "{s}"),
            AttackTarget::Block(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSuiteResult {
    pub target: AttackTarget,
    pub correct_map: f64,
    pub plain_map: f64,
    pub incorrect_map_mean: f64,
    pub incorrect_map_std: f64,
    pub n_wrong_keys: usize,
}

impl AttackSuiteResult {
    /// Correct-key mAP minus the best unauthorized mAP.
    pub fn protection_gap(&self) -> f64 {
        self.correct_map - self.plain_map.max(self.incorrect_map_mean)
    }
}

/// Outcome of evaluating a model under a set of wrong keys.
#[derive(Debug, Clone, PartialEq)]
pub struct WrongKeyResult {
    /// One report per key, in key order.
    pub reports: Vec<EvalReport>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Plain attack: the protected model queried without any transform.
pub fn run_plain(ckpt: &Checkpoint, dataset: &Dataset) -> Result<EvalReport> {
    evaluate(&ckpt.to_model()?, dataset, &KeyMode::Plain)
}

/// Whether every protected transform `key` induces is the identity while a
/// non-identity one exists. Such a key would just replay the plain attack.
fn is_degenerate(cfg: &DetectorConfig, key: &SecretKey) -> Result<bool> {
    let keying = Keying::derive(cfg, key)?;
    let mut perms: Vec<_> = keying.site_permutations().values().collect();
    if let Some(shf) = keying.input_shuffle() {
        perms.push(shf.permutation());
    }
    let nontrivial = perms.iter().any(|p| p.len() > 1);
    Ok(nontrivial && perms.iter().all(|p| p.is_identity()))
}

/// Draws `n` random keys that differ from the checkpoint's key (by fingerprint)
/// and do not collapse to the identity at the protected sites.
pub fn sample_wrong_keys(ckpt: &Checkpoint, n: usize, seed: u64) -> Result<Vec<SecretKey>> {
    if n == 0 {
        return Err(Error::config("at least one wrong key is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::with_capacity(n);
    while keys.len() < n {
        let key = SecretKey::random(&mut rng, WRONG_KEY_LEN)?;
        if ckpt.key_fingerprint.as_deref() == Some(key.fingerprint().as_str()) {
            continue;
        }
        if is_degenerate(&ckpt.config, &key)? {
            continue;
        }
        keys.push(key);
    }
    Ok(keys)
}

/// Evaluates the checkpoint once per key under the Incorrect protocol.
pub fn run_with_keys(ckpt: &Checkpoint, dataset: &Dataset, keys: &[SecretKey]) -> Result<WrongKeyResult> {
    if keys.is_empty() {
        return Err(Error::config("at least one wrong key is required"));
    }
    let model = ckpt.to_model()?;
    let reports = keys
        .iter()
        .map(|k| evaluate(&model, dataset, &KeyMode::Incorrect(k.clone())))
        .collect::<Result<Vec<_>>>()?;
    let maps: Vec<f64> = reports.iter().map(|r| r.map_value).collect();
    let (mean, std) = mean_std(&maps);
    Ok(WrongKeyResult { reports, mean, std })
}

/// Incorrect-key attack with `n` random keys drawn from `seed`.
pub fn run_wrong_keys(ckpt: &Checkpoint, dataset: &Dataset, n: usize, seed: u64) -> Result<WrongKeyResult> {
    let keys = sample_wrong_keys(ckpt, n, seed)?;
    run_with_keys(ckpt, dataset, &keys)
}

/// All three protocols against a trained checkpoint. `key` is only used for
/// the Correct run.
pub fn attack_suite(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    key: &SecretKey,
    target: AttackTarget,
    n: usize,
    seed: u64,
) -> Result<AttackSuiteResult> {
    let correct = evaluate(&ckpt.to_model()?, dataset, &KeyMode::Correct(key.clone()))?;
    let plain = run_plain(ckpt, dataset)?;
    let wrong = run_wrong_keys(ckpt, dataset, n, seed)?;
    Ok(AttackSuiteResult {
        target,
        correct_map: correct.map_value,
        plain_map: plain.map_value,
        incorrect_map_mean: wrong.mean,
        incorrect_map_std: wrong.std,
        n_wrong_keys: n,
    })
}

/// Shared recipe for a sweep: every row trains from the same initialization
/// seed with the same key and schedule.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub key: SecretKey,
    pub n_wrong_keys: usize,
    pub attack_seed: u64,
}

impl SweepSettings {
    pub fn new(key: SecretKey) -> Self {
        Self {
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            model_seed: 0,
            key,
            n_wrong_keys: DEFAULT_WRONG_KEYS,
            attack_seed: 0,
        }
    }

    fn unprotected(&self) -> DetectorConfig {
        DetectorConfig {
            encrypted_sites: Default::default(),
            input_block_size: None,
            ..self.detector.clone()
        }
    }
}

/// One trained sweep row together with its training artifacts.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub result: AttackSuiteResult,
    pub outcome: TrainOutcome,
}

fn train_row(
    cfg: DetectorConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    target: AttackTarget,
    settings: &SweepSettings,
) -> Result<SweepRow> {
    let model = build_model(cfg, settings.model_seed)?;
    if target == AttackTarget::Baseline {
        let outcome = train(model, train_set, None, &settings.train)?;
        let report = evaluate_keyed(
            &outcome.model,
            test_set,
            None,
            Protocol::Baseline,
            &EvalParams::default(),
            Exec::default(),
        )?;
        // Nothing is keyed, so every protocol sees the same network.
        let m = report.map_value;
        let result = AttackSuiteResult {
            target,
            correct_map: m,
            plain_map: m,
            incorrect_map_mean: m,
            incorrect_map_std: 0.0,
            n_wrong_keys: settings.n_wrong_keys.max(1),
        };
        return Ok(SweepRow { result, outcome });
    }
    let outcome = train(model, train_set, Some(&settings.key), &settings.train)?;
    let result = attack_suite(
        &outcome.checkpoint,
        test_set,
        &settings.key,
        target,
        settings.n_wrong_keys,
        settings.attack_seed,
    )?;
    Ok(SweepRow { result, outcome })
}

/// Trains the unprotected baseline with the sweep's recipe.
pub fn baseline_row(train_set: &Dataset, test_set: &Dataset, settings: &SweepSettings) -> Result<SweepRow> {
    train_row(settings.unprotected(), train_set, test_set, AttackTarget::Baseline, settings)
}

/// Trains one model per encrypted site and runs all three protocols on each.
pub fn site_sweep(
    train_set: &Dataset,
    test_set: &Dataset,
    sites: &[usize],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let base = settings.unprotected();
    let configs = sites
        .iter()
        .map(|&s| {
            let cfg = base.clone().with_sites([s]);
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_iter()
        .zip(sites)
        .map(|(cfg, &s)| train_row(cfg, train_set, test_set, AttackTarget::Site(s), settings))
        .collect()
}

/// Trains one model per block size on shuffled inputs and attacks each.
pub fn shf_sweep(
    train_set: &Dataset,
    test_set: &Dataset,
    block_sizes: &[usize],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let base = settings.unprotected();
    let configs = block_sizes
        .iter()
        .map(|&m| {
            if m == 0 || base.input_size % m != 0 {
                return Err(Error::config(format!(
                    "block size {m} does not divide the input size {}",
                    base.input_size
                )));
            }
            let cfg = DetectorConfig {
                input_block_size: Some(m),
                ..base.clone()
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_iter()
        .zip(block_sizes)
        .map(|(cfg, &m)| train_row(cfg, train_set, test_set, AttackTarget::Block(m), settings))
        .collect()
}

/// `site,correct,plain,incorrect_mean,incorrect_std`
pub fn site_table_csv(rows: &[AttackSuiteResult]) -> String {
    let mut s = String::from("site,correct,plain,incorrect_mean,incorrect_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.target, r.correct_map, r.plain_map, r.incorrect_map_mean, r.incorrect_map_std
        );
    }
    s
}

/// `method,block_size,correct,plain,incorrect_mean`; feature-map rows are
/// labelled `proposed` with the site in the block column.
pub fn shf_table_csv(rows: &[AttackSuiteResult]) -> String {
    let mut s = String::from("method,block_size,correct,plain,incorrect_mean\n");
    for r in rows {
        let method = match r.target {
            AttackTarget::Block(_) => "shf",
            AttackTarget::Site(_) => "proposed",
            AttackTarget::Baseline => "baseline",
        };
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            method, r.target, r.correct_map, r.plain_map, r.incorrect_map_mean
        );
    }
    s
}
