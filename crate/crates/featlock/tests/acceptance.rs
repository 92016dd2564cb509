//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{fuzz_case, oracle_ap};
use featlock::attacks::{baseline_row, shf_sweep, site_sweep, site_table_csv, SweepRow, SweepSettings};
use featlock::boxes::BBox;
use featlock::data::{Dataset, Object, SynthSpec};
use featlock::detector::{PriorBox, RawPrediction};
use featlock::evaluation::{average_precision, evaluate_checkpoint, ApMethod, GtBox, KeyMode, ScoredBox};
use featlock::keyed_transforms::{
    apply_permutation, decrypt_image, derive_permutation, encrypt_image, invert_permutation, SecretKey,
};
use featlock::tensor::Tensor3;
use featlock::training::{grad_check, match_priors, multibox_loss_and_grad, smooth_l1, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SITE_EARLY: usize = 2;
const SITE_DEEP: usize = 6;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration, o: Outcome) -> Outcome {
    if elapsed < limit {
        o
    } else {
        outcome(false, format!("{} but took {elapsed:.1?} (limit {limit:?})", o.detail))
    }
}

fn permutation_properties() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for c in 1..=64usize {
        for _ in 0..100 {
            let key = SecretKey::random(&mut rng, 16).unwrap();
            let p = derive_permutation(&key, c).unwrap();
            let mut sorted = p.to_one_based();
            sorted.sort_unstable();
            if sorted != (1..=c).collect::<Vec<_>>() {
                failures.push(format!("c={c}: not a bijection"));
            }
            if derive_permutation(&key, c).unwrap() != p {
                failures.push(format!("c={c}: not deterministic"));
            }
            let x = Tensor3::from_fn(c, 3, 4, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap();
            let y = apply_permutation(&x, &p).unwrap();
            let alpha = p.to_one_based();
            for i in 0..c {
                for r in 0..3 {
                    for col in 0..4 {
                        if y.get(i, r, col) != x.get(alpha[i] - 1, r, col) {
                            failures.push(format!("c={c}: slice {i} moved inexactly"));
                        }
                    }
                }
            }
            if apply_permutation(&y, &invert_permutation(&p)).unwrap() != x {
                failures.push(format!("c={c}: inverse does not restore"));
            }
        }
    }
    let o = match failures.first() {
        None => outcome(true, "6400 key/width pairs exact"),
        Some(f) => outcome(false, format!("{} failures, first: {f}", failures.len())),
    };
    within(t.elapsed(), Duration::from_secs(10), o)
}

fn shf_round_trip() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Tensor3::from_fn(3, 300, 300, |_, _, _| rng.random::<f32>()).unwrap();
    let key = SecretKey::random(&mut rng, 16).unwrap();
    let mut bad = Vec::new();
    for m in [1usize, 4, 12, 20, 60] {
        let enc = encrypt_image(&img, &key, m).unwrap();
        if decrypt_image(&enc, &key, m).unwrap() != img {
            bad.push(m);
        }
    }
    let o = if bad.is_empty() {
        outcome(true, "M in {1,4,12,20,60} exact on 300x300x3")
    } else {
        outcome(false, format!("round trip failed for M={bad:?}"))
    };
    within(t.elapsed(), Duration::from_secs(10), o)
}

fn loss_correctness() -> Outcome {
    let t = Instant::now();
    let closed = [(0.0, 0.0), (1.0, 0.5), (2.5, 2.0)];
    let exact = closed.iter().all(|&(u, v)| smooth_l1(u) == v && smooth_l1(-u) == v);
    let priors: Vec<PriorBox> = [(0.25, 0.25, 0.5, 0.5), (0.75, 0.25, 0.5, 0.5), (0.25, 0.75, 0.5, 0.5), (0.5, 0.5, 0.6, 0.6)]
        .map(|(cx, cy, w, h)| PriorBox { cx, cy, w, h })
        .to_vec();
    let gt = Object {
        bbox: BBox::new(0.1, 0.1, 0.5, 0.45),
        label: 1,
        difficult: false,
    };
    let m = match_priors(&priors, &[gt], 0.5).unwrap();
    let params = [
        0.2, -0.3, 0.5, 0.1, 1.1, 0.4, -0.2, 0.0, -0.5, 0.3, 0.8, -1.0, 0.0, 0.9, -0.7, 0.6, 0.3, -0.2, 1.4, -0.1, 0.05,
        0.1, -0.3, 0.2, -0.6, 0.0, 0.25, 0.9, 0.1, -1.5, 0.0, 0.35,
    ];
    let f = |p: &[f64]| {
        let raw = RawPrediction::new(4, p[..16].to_vec(), p[16..].to_vec()).unwrap();
        let (l, g) = multibox_loss_and_grad(&raw, &m, 1.0, 3).unwrap();
        (l.total, g.all_logits().iter().chain(g.all_offsets()).copied().collect())
    };
    let report = grad_check(f, &params, 1e-4, 1e-3);
    let pass = exact && report.max_rel_error < 1e-3 && report.checked == 32;
    let o = outcome(
        pass,
        format!(
            "smooth_l1 closed forms {}, max relative gradient error {:.2e} over {} params",
            if exact { "exact" } else { "WRONG" },
            report.max_rel_error,
            report.checked
        ),
    );
    within(t.elapsed(), Duration::from_secs(30), o)
}

fn map_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut out_of_range = 0;
    for seed in 0..500u64 {
        let case = fuzz_case(seed);
        for method in [ApMethod::ElevenPoint, ApMethod::Continuous] {
            let fast = average_precision(&case.dets, &case.gts, 0.5, method).ap;
            worst = worst.max((fast - oracle_ap(&case, 0.5, method)).abs());
            if !(0.0..=1.0).contains(&fast) {
                out_of_range += 1;
            }
        }
    }
    let gts = vec![vec![
        GtBox { bbox: BBox::new(0.1, 0.1, 0.4, 0.4), difficult: false },
        GtBox { bbox: BBox::new(0.5, 0.5, 0.9, 0.8), difficult: false },
    ]];
    let perfect: Vec<ScoredBox> = gts[0]
        .iter()
        .enumerate()
        .map(|(i, g)| ScoredBox { image: 0, score: 1.0 - i as f64 * 0.1, bbox: g.bbox })
        .collect();
    let p = average_precision(&perfect, &gts, 0.5, ApMethod::ElevenPoint).ap;
    let e = average_precision(&[], &gts, 0.5, ApMethod::ElevenPoint).ap;
    let pass = worst <= 1e-9 && out_of_range == 0 && p == 1.0 && e == 0.0;
    let o = outcome(
        pass,
        format!("500 fuzzed cases, max |fast - oracle| {worst:.1e}, perfect {p}, empty {e}"),
    );
    within(t.elapsed(), Duration::from_secs(60), o)
}

fn seed_key(seed: u64) -> SecretKey {
    SecretKey::random(&mut ChaCha8Rng::seed_from_u64(0xfea7_0000 + seed), 16).unwrap()
}

fn settings(seed: u64) -> SweepSettings {
    SweepSettings {
        model_seed: seed,
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        attack_seed: seed,
        ..SweepSettings::new(seed_key(seed))
    }
}

/// Trainings shared across criteria, created on first use.
struct Runs {
    train: Dataset,
    test: Dataset,
    rows: BTreeMap<String, (SweepRow, Duration)>,
}

impl Runs {
    fn new() -> Self {
        Self {
            train: Dataset::synthetic(&SynthSpec::train(0)).unwrap(),
            test: Dataset::synthetic(&SynthSpec::test(0)).unwrap(),
            rows: BTreeMap::new(),
        }
    }

    fn get(&mut self, name: &str, seed: u64) -> &(SweepRow, Duration) {
        let id = format!("{name}/seed{seed}");
        if !self.rows.contains_key(&id) {
            let t = Instant::now();
            let s = settings(seed);
            let row = match name {
                "baseline" => baseline_row(&self.train, &self.test, &s),
                "repeat-site" => site_sweep(&self.train, &self.test, &[SITE_EARLY], &s).map(|mut v| v.remove(0)),
                _ if name.starts_with("site") => {
                    site_sweep(&self.train, &self.test, &[name[4..].parse().unwrap()], &s).map(|mut v| v.remove(0))
                }
                _ if name.starts_with("shf") => {
                    shf_sweep(&self.train, &self.test, &[name[3..].parse().unwrap()], &s).map(|mut v| v.remove(0))
                }
                _ => unreachable!("{name}"),
            }
            .unwrap();
            let elapsed = t.elapsed();
            let r = &row.result;
            eprintln!(
                "  trained {id} in {elapsed:.0?}: correct {:.4} plain {:.4} incorrect {:.4} ± {:.4}",
                r.correct_map, r.plain_map, r.incorrect_map_mean, r.incorrect_map_std
            );
            self.rows.insert(id.clone(), (row, elapsed));
        }
        &self.rows[&id]
    }
}

fn key_equivalence(runs: &mut Runs) -> Outcome {
    let (base, t_base) = runs.get("baseline", 0).clone();
    let (site, t_site) = runs.get(&format!("site{SITE_EARLY}"), 0).clone();
    let diff = (site.result.correct_map - base.result.correct_map).abs();
    let o = outcome(
        diff <= 0.05,
        format!(
            "site-{SITE_EARLY} Correct {:.4} vs Baseline {:.4}, |diff| {diff:.4} (limit 0.05)",
            site.result.correct_map, base.result.correct_map
        ),
    );
    within(t_base + t_site, Duration::from_secs(30 * 60), o)
}

fn protection(runs: &mut Runs) -> Outcome {
    let r = &runs.get(&format!("site{SITE_EARLY}"), 0).0.result;
    let half = 0.5 * r.correct_map;
    outcome(
        r.plain_map < half && r.incorrect_map_mean < half,
        format!(
            "Correct {:.4}, Plain {:.4}, Incorrect mean {:.4} ± {:.4} over {} keys (limit {half:.4})",
            r.correct_map, r.plain_map, r.incorrect_map_mean, r.incorrect_map_std, r.n_wrong_keys
        ),
    )
}

fn deep_leakage(runs: &mut Runs) -> Outcome {
    let mut votes = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let early = runs.get(&format!("site{SITE_EARLY}"), seed).0.result.clone();
        let deep = runs.get(&format!("site{SITE_DEEP}"), seed).0.result.clone();
        let (ge, gd) = (early.correct_map - early.plain_map, deep.correct_map - deep.plain_map);
        if ge > gd {
            votes += 1;
        }
        parts.push(format!("seed {seed}: {ge:.4} vs {gd:.4}"));
    }
    outcome(
        votes * 2 > SEEDS.len(),
        format!(
            "gap site {SITE_EARLY} > site {SITE_DEEP} in {votes}/{} seeds ({})",
            SEEDS.len(),
            parts.join("; ")
        ),
    )
}

fn shf_comparison(runs: &mut Runs) -> Outcome {
    let half_m = featlock::detector::DetectorConfig::default().input_size / 2;
    let proposed = runs.get(&format!("site{SITE_EARLY}"), 0).0.result.clone();
    let large = runs.get(&format!("shf{half_m}"), 0).0.result.clone();
    let unit = runs.get("shf1", 0).0.result.clone();
    let drop = proposed.correct_map - large.correct_map;
    let leak = (unit.correct_map - unit.plain_map).abs();
    outcome(
        drop >= 0.05 && leak <= 0.1,
        format!(
            "M={half_m} Correct {:.4} vs proposed {:.4} (drop {drop:.4}, need >= 0.05); M=1 Correct {:.4} Plain {:.4} (|diff| {leak:.4}, need <= 0.1)",
            large.correct_map, proposed.correct_map, unit.correct_map, unit.plain_map
        ),
    )
}

/// Every CSV a criterion 5/6 run produces.
fn report_csvs(runs: &Runs, row: &SweepRow, key: &SecretKey) -> Vec<String> {
    let ckpt = &row.outcome.checkpoint;
    vec![
        row.outcome.log.to_csv(),
        evaluate_checkpoint(ckpt, &runs.test, &KeyMode::Correct(key.clone())).unwrap().to_csv(),
        evaluate_checkpoint(ckpt, &runs.test, &KeyMode::Plain).unwrap().to_csv(),
        site_table_csv(std::slice::from_ref(&row.result)),
    ]
}

fn reproducibility(runs: &mut Runs) -> Outcome {
    let key = seed_key(0);
    let first = runs.get(&format!("site{SITE_EARLY}"), 0).0.clone();
    let second = runs.get("repeat-site", 0).0.clone();
    let a = report_csvs(runs, &first, &key);
    let b = report_csvs(runs, &second, &key);
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    outcome(
        a == b && first.outcome.checkpoint == second.outcome.checkpoint,
        format!("{same}/{} report CSVs byte-identical across repeated site-{SITE_EARLY} runs", a.len()),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut runs = None;
    let mut failed = 0;
    type Check = fn(&mut Runs) -> Outcome;
    let cheap: [(u32, &str, fn() -> Outcome); 4] = [
        (1, "permutation properties", permutation_properties),
        (2, "SHF bijectivity", shf_round_trip),
        (3, "loss correctness", loss_correctness),
        (4, "mAP oracle equivalence", map_oracle),
    ];
    let trained: [(u32, &str, Check); 5] = [
        (5, "key equivalence", key_equivalence),
        (6, "protection", protection),
        (7, "deep-layer leakage trend", deep_leakage),
        (8, "SHF comparison trend", shf_comparison),
        (9, "reproducibility", reproducibility),
    ];
    let mut report = |n: u32, name: &str, o: Outcome| {
        if !o.pass {
            failed += 1;
        }
        println!("{} [{n}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    for (n, name, f) in cheap {
        if run(n) {
            report(n, name, f());
        }
    }
    for (n, name, f) in trained {
        if run(n) {
            let r = runs.get_or_insert_with(Runs::new);
            report(n, name, f(r));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
