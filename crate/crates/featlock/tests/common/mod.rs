#![allow(dead_code)]

use featlock::boxes::BBox;
use featlock::evaluation::{ApMethod, GtBox, ScoredBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct ApCase {
    pub dets: Vec<ScoredBox>,
    pub gts: Vec<Vec<GtBox>>,
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let area = |r: &BBox| (r.xmax - r.xmin) * (r.ymax - r.ymin);
    inter / (area(a) + area(b) - inter)
}

/// Ranks detections and scores every prefix of the ranking from scratch.
/// Returns one `(precision, recall)` point per prefix and the matched flags.
pub fn pr_points(case: &ApCase, thresh: f64) -> (Vec<(f64, f64)>, Vec<Vec<bool>>) {
    let npos = case.gts.iter().flatten().filter(|g| !g.difficult).count() as f64;
    let mut order: Vec<usize> = (0..case.dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&case.dets[a], &case.dets[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap()
            .then(da.image.cmp(&db.image))
            .then(a.cmp(&b))
    });
    let mut points = Vec::new();
    let mut final_taken = Vec::new();
    for k in 1..=order.len() {
        let mut taken: Vec<Vec<bool>> = case.gts.iter().map(|g| vec![false; g.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        for &i in &order[..k] {
            let d = &case.dets[i];
            let gts = case.gts.get(d.image).map_or(&[][..], Vec::as_slice);
            let mut best = None;
            let mut best_ov = f64::NEG_INFINITY;
            for (j, g) in gts.iter().enumerate() {
                let ov = overlap(&g.bbox, &d.bbox);
                if ov > best_ov {
                    best_ov = ov;
                    best = Some(j);
                }
            }
            match best {
                Some(j) if best_ov > thresh => {
                    if gts[j].difficult {
                        continue;
                    }
                    if taken[d.image][j] {
                        fp += 1;
                    } else {
                        taken[d.image][j] = true;
                        tp += 1;
                    }
                }
                _ => fp += 1,
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        points.push((p, tp as f64 / npos));
        final_taken = taken;
    }
    if order.is_empty() {
        final_taken = case.gts.iter().map(|g| vec![false; g.len()]).collect();
    }
    (points, final_taken)
}

/// AP straight from the precision-recall points.
pub fn oracle_ap(case: &ApCase, thresh: f64, method: ApMethod) -> f64 {
    if case.gts.iter().flatten().all(|g| g.difficult) {
        return 0.0;
    }
    let (points, _) = pr_points(case, thresh);
    let best_prec_from = |r: f64| {
        points
            .iter()
            .filter(|(_, rec)| *rec >= r)
            .map(|(p, _)| *p)
            .fold(0.0, f64::max)
    };
    match method {
        ApMethod::ElevenPoint => (0..=10).map(|t| best_prec_from(t as f64 / 10.0)).sum::<f64>() / 11.0,
        ApMethod::Continuous => {
            let mut levels: Vec<f64> = points.iter().map(|(_, r)| *r).filter(|&r| r > 0.0).collect();
            levels.dedup();
            let mut prev = 0.0;
            let mut area = 0.0;
            for r in levels {
                area += (r - prev) * best_prec_from(r);
                prev = r;
            }
            area
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(0.05..0.6);
    let h = rng.random_range(0.05..0.6);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox::new(x, y, x + w, y + h)
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let s = 0.05;
    let mut x0 = b.xmin + rng.random_range(-s..s);
    let mut y0 = b.ymin + rng.random_range(-s..s);
    let mut x1 = b.xmax + rng.random_range(-s..s);
    let mut y1 = b.ymax + rng.random_range(-s..s);
    if x1 <= x0 + 0.01 {
        x1 = x0 + 0.02;
    }
    if y1 <= y0 + 0.01 {
        y1 = y0 + 0.02;
    }
    x0 = x0.clamp(0.0, 0.98);
    y0 = y0.clamp(0.0, 0.98);
    BBox::new(x0, y0, x1.clamp(x0 + 0.01, 1.0), y1.clamp(y0 + 0.01, 1.0))
}

/// Up to 20 detections and 10 ground-truth boxes over 1..=4 images, with
/// duplicates, score ties and difficult boxes mixed in.
pub fn fuzz_case(seed: u64) -> ApCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = rng.random_range(1..=4);
    let n_gt = rng.random_range(0..=10);
    let mut gts: Vec<Vec<GtBox>> = vec![Vec::new(); images];
    for _ in 0..n_gt {
        let img = rng.random_range(0..images);
        gts[img].push(GtBox {
            bbox: random_box(&mut rng),
            difficult: rng.random_bool(0.15),
        });
    }
    let n_det = rng.random_range(0..=20);
    let coarse = rng.random_bool(0.5);
    let mut dets = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let image = rng.random_range(0..images);
        let bbox = match gts[image].len() {
            0 => random_box(&mut rng),
            n if rng.random_bool(0.7) => {
                let g = gts[image][rng.random_range(0..n)].bbox;
                jitter(&mut rng, &g)
            }
            _ => random_box(&mut rng),
        };
        let score = if coarse {
            rng.random_range(0..5) as f64 / 4.0
        } else {
            rng.random_range(0.0..1.0)
        };
        dets.push(ScoredBox { image, score, bbox });
    }
    ApCase { dets, gts }
}
