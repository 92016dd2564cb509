use featlock::boxes::BBox;
use featlock::data::{Dataset, Object, SynthSpec};
use featlock::detector::{build_model, Checkpoint, DetectorConfig, Keying, PriorBox, RawPrediction, StageSpec};
use featlock::keyed_transforms::SecretKey;
use featlock::training::{
    grad_check, match_priors, multibox_loss, multibox_loss_and_grad, train, train_keyed, LrPhase, TrainConfig,
};
use featlock::{Error, Exec};

fn fixture_priors() -> Vec<PriorBox> {
    [(0.25, 0.25, 0.5, 0.5), (0.75, 0.25, 0.5, 0.5), (0.25, 0.75, 0.5, 0.5), (0.5, 0.5, 0.6, 0.6)]
        .map(|(cx, cy, w, h)| PriorBox { cx, cy, w, h })
        .to_vec()
}

fn fixture_object() -> Object {
    Object {
        bbox: BBox::new(0.1, 0.1, 0.5, 0.45),
        label: 1,
        difficult: false,
    }
}

const LOGITS: [f64; 16] = [
    0.2, -0.3, 0.5, 0.1, 1.1, 0.4, -0.2, 0.0, -0.5, 0.3, 0.8, -1.0, 0.0, 0.9, -0.7, 0.6,
];
const OFFSETS: [f64; 16] = [
    0.3, -0.2, 1.4, -0.1, 0.05, 0.1, -0.3, 0.2, -0.6, 0.0, 0.25, 0.9, 0.1, -1.5, 0.0, 0.35,
];

#[test]
fn multibox_fixture_matches_scalar_oracle() {
    let text = include_str!("data/multibox_fixture.txt");
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let labels: Vec<usize> = lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    let expect: Vec<f64> = lines.next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();

    let m = match_priors(&fixture_priors(), &[fixture_object()], 0.5).unwrap();
    assert_eq!(m.labels, labels);
    let raw = RawPrediction::new(4, LOGITS.to_vec(), OFFSETS.to_vec()).unwrap();
    let l = multibox_loss(&raw, &m, 1.0, 3).unwrap();
    for (got, want) in [l.total, l.loc, l.conf].iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn multibox_gradient_matches_finite_differences() {
    let m = match_priors(&fixture_priors(), &[fixture_object()], 0.5).unwrap();
    let params: Vec<f64> = LOGITS.iter().chain(&OFFSETS).copied().collect();
    let f = |p: &[f64]| {
        let raw = RawPrediction::new(4, p[..16].to_vec(), p[16..].to_vec()).unwrap();
        let (l, g) = multibox_loss_and_grad(&raw, &m, 1.0, 3).unwrap();
        (l.total, g.all_logits().iter().chain(g.all_offsets()).copied().collect())
    };
    let report = grad_check(f, &params, 1e-4, 1e-3);
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked, 32);
}

#[test]
fn matching_agrees_with_exhaustive_search() {
    let priors = vec![
        PriorBox { cx: 0.3, cy: 0.3, w: 0.4, h: 0.4 },
        PriorBox { cx: 0.5, cy: 0.5, w: 0.5, h: 0.5 },
        PriorBox { cx: 0.7, cy: 0.7, w: 0.3, h: 0.3 },
    ];
    let gt = Object {
        bbox: BBox::new(0.25, 0.25, 0.7, 0.7),
        label: 0,
        difficult: false,
    };
    // IoU by hand against each prior's corners.
    let ious: Vec<f64> = priors
        .iter()
        .map(|p| {
            let c = p.to_corners();
            let iw = (c.xmax.min(0.7) - c.xmin.max(0.25)).max(0.0);
            let ih = (c.ymax.min(0.7) - c.ymin.max(0.25)).max(0.0);
            let inter = iw * ih;
            inter / (p.w * p.h + 0.45 * 0.45 - inter)
        })
        .collect();
    let best = (0..3).fold(0, |b, i| if ious[i] > ious[b] { i } else { b });
    for threshold in [0.3, 0.5, 0.9] {
        let m = match_priors(&priors, std::slice::from_ref(&gt), threshold).unwrap();
        for i in 0..3 {
            let expect = i == best || ious[i] >= threshold;
            assert_eq!(m.is_positive(i), expect, "prior {i} at {threshold}");
        }
    }
}

#[test]
fn gt_equal_to_prior_gets_zero_offsets() {
    let priors = fixture_priors();
    let gt = Object {
        bbox: priors[3].to_corners(),
        label: 2,
        difficult: false,
    };
    let m = match_priors(&priors, &[gt], 0.5).unwrap();
    assert_eq!(m.labels[3], 3);
    for v in m.targets[3] {
        assert!(v.abs() < 1e-12);
    }
}

fn small_set(seed: u64, n: usize) -> Dataset {
    Dataset::synthetic(&SynthSpec {
        num_images: n,
        ..SynthSpec::train(seed)
    })
    .unwrap()
}

fn schedule(iterations: usize) -> TrainConfig {
    TrainConfig {
        schedule: vec![LrPhase { iterations, lr: 1e-3 }],
        ..TrainConfig::default()
    }
}

#[test]
fn loss_decreases_over_fifty_iterations() {
    let mut decreased = 0;
    for seed in 0..10u64 {
        let data = small_set(seed, 64);
        let model = build_model(DetectorConfig::default(), seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..schedule(50)
        };
        let out = train(model, &data, None, &cfg).unwrap();
        let rows = &out.log.rows;
        assert_eq!(rows.len(), 50);
        for r in rows {
            assert!(r.total >= 0.0 && r.loc >= 0.0 && r.conf >= 0.0);
        }
        if rows[49].total < rows[0].total {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased in {decreased}/10 seeds");
}

#[test]
fn zero_iterations_keep_initialization() {
    let model = build_model(DetectorConfig::default(), 4).unwrap();
    let init = Checkpoint::from_model(&model, 0, 0, None);
    let out = train(model, &small_set(1, 4), None, &schedule(0)).unwrap();
    assert_eq!(out.checkpoint, init);
    assert!(out.log.rows.is_empty());
}

#[test]
fn protected_model_requires_key() {
    let model = build_model(DetectorConfig::default().with_sites([2]), 0).unwrap();
    let err = train(model, &small_set(1, 4), None, &schedule(1)).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

fn tiny_config() -> DetectorConfig {
    DetectorConfig {
        pyramid: [8, 8, 8, 8, 8, 8]
            .into_iter()
            .map(|channels| StageSpec { channels, stride: 2 })
            .collect(),
        ..DetectorConfig::default()
    }
    .with_sites([2])
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let data = small_set(2, 16);
    let key = SecretKey::new(vec![3u8; 16]).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        ..schedule(5)
    };
    let keying = Keying::derive(&tiny_config(), &key).unwrap();
    let run = |exec| {
        let model = build_model(tiny_config(), 1).unwrap();
        train_keyed(model, &data, Some(&keying), Some(key.fingerprint()), &cfg, exec).unwrap()
    };
    let a = run(Exec::Sequential);
    let b = run(Exec::default());
    let c = run(Exec::default());
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(b.checkpoint, c.checkpoint);
    assert_eq!(a.log.to_csv(), c.log.to_csv());
    assert_eq!(a.checkpoint.key_fingerprint, Some(key.fingerprint()));
}

#[test]
fn log_csv_has_expected_header() {
    let out = train(build_model(tiny_config(), 1).unwrap(), &small_set(3, 4), Some(&SecretKey::new(vec![1u8; 16]).unwrap()), &TrainConfig { batch_size: 2, ..schedule(2) }).unwrap();
    let csv = out.log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("iteration,lr,total,loc,conf"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn class_count_mismatch_is_rejected() {
    let cfg = DetectorConfig {
        num_classes: 2,
        ..DetectorConfig::default()
    };
    let model = build_model(cfg, 0).unwrap();
    assert!(train(model, &small_set(1, 4), None, &schedule(1)).is_err());
}
