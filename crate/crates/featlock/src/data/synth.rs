use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Image, Tensor3};

use super::{Object, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Whether pixel-space point `(px, py)` lies in the shape inscribed in
    /// the square box `(x0, y0, side)`.
    fn contains(self, px: f64, py: f64, x0: f64, y0: f64, side: f64) -> bool {
        let u = (px - x0) / side;
        let v = (py - y0) / side;
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return false;
        }
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => (u - 0.5).powi(2) + (v - 0.5).powi(2) <= 0.25,
            // Apex at top center, base along the bottom edge.
            ShapeKind::Triangle => (u - 0.5).abs() <= v / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_images: usize,
    pub image_size: usize,
    pub classes: Vec<ShapeKind>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object side as a fraction of the image side.
    pub min_size: f64,
    pub max_size: f64,
    /// Amplitude of uniform per-pixel background noise.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_images: 2000,
            image_size: 96,
            classes: vec![ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle],
            min_objects: 1,
            max_objects: 3,
            min_size: 0.2,
            max_size: 0.5,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Default training split.
    pub fn train(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Default test split; its seed stream is disjoint from [`SynthSpec::train`].
    pub fn test(seed: u64) -> Self {
        Self {
            num_images: 500,
            seed: seed ^ 0x7e57_7e57_7e57_7e57,
            ..Self::default()
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::config("image_size must be at least 8"));
        }
        if self.classes.is_empty() {
            return Err(Error::config("at least one shape class is required"));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::config("object count range must satisfy 1 <= min <= max"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size <= 1.0) {
            return Err(Error::config("size range must satisfy 0 < min <= max <= 1"));
        }
        if !(self.noise >= 0.0 && self.noise <= 1.0) {
            return Err(Error::config("noise must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Fills `kind` inscribed in the square of `side` pixels centered at
/// `(cx, cy)` with `color`, and returns its normalized bounding box.
pub fn draw_shape(img: &mut Image, kind: ShapeKind, cx: f64, cy: f64, side: f64, color: &[f32]) -> BBox {
    let (c, h, w) = img.shape();
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;
    let ys = (y0.floor().max(0.0) as usize)..((y0 + side).ceil().min(h as f64) as usize);
    for y in ys {
        let xs = (x0.floor().max(0.0) as usize)..((x0 + side).ceil().min(w as f64) as usize);
        for x in xs {
            if kind.contains(x as f64 + 0.5, y as f64 + 0.5, x0, y0, side) {
                for ch in 0..c {
                    img.set(ch, y, x, color[ch % color.len()]);
                }
            }
        }
    }
    BBox::new(x0 / w as f64, y0 / h as f64, (x0 + side) / w as f64, (y0 + side) / h as f64)
}

fn random_color(rng: &mut ChaCha8Rng, avoid: &[f32]) -> [f32; 3] {
    let mut best = [0.0f32; 3];
    let mut best_d = -1.0f32;
    for _ in 0..16 {
        let c = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let d: f32 = c.iter().zip(avoid).map(|(a, b)| (a - b).abs()).sum();
        if d >= 0.75 {
            return c;
        }
        if d > best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn generate_one(spec: &SynthSpec, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = spec.image_size;
    let bg = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
    let mut data = Vec::with_capacity(3 * n * n);
    for &base in &bg {
        for _ in 0..n * n {
            let jitter = rng.random_range(-1.0f32..=1.0) * spec.noise;
            data.push((base + jitter).clamp(0.0, 1.0));
        }
    }
    let mut img = Tensor3::from_raw(3, n, n, data);

    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut objects: Vec<Object> = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random_range(0..spec.classes.len());
        let frac = rng.random_range(spec.min_size..=spec.max_size);
        let side = frac * n as f64;
        let mut placed = None;
        for _ in 0..50 {
            let cx = rng.random_range(side / 2.0..=n as f64 - side / 2.0);
            let cy = rng.random_range(side / 2.0..=n as f64 - side / 2.0);
            let b = BBox::from_center(cx / n as f64, cy / n as f64, frac, frac);
            if objects.iter().all(|o| o.bbox.iou_unchecked(&b) <= 0.1) {
                placed = Some((cx, cy));
                break;
            }
        }
        let Some((cx, cy)) = placed else { continue };
        let color = random_color(&mut rng, &bg);
        let bbox = draw_shape(&mut img, spec.classes[label], cx, cy, side, &color).clip_unit();
        objects.push(Object {
            bbox,
            label,
            difficult: false,
        });
    }
    Sample { image: img, objects }
}

/// Generates `spec.num_images` samples; image `i` depends only on `(spec, i)`.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<Sample>> {
    generate_dataset_with(spec, Exec::default())
}

pub fn generate_dataset_with(spec: &SynthSpec, exec: Exec) -> Result<Vec<Sample>> {
    spec.validate()?;
    Ok(exec.map_range(spec.num_images, |i| generate_one(spec, i)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            num_images: 12,
            image_size: 32,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn empty_spec_gives_empty_dataset() {
        let spec = SynthSpec {
            num_images: 0,
            ..SynthSpec::default()
        };
        assert!(generate_dataset(&spec).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate_dataset(&small(3)).unwrap();
        let b = generate_dataset_with(&small(3), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small(4)).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn centered_half_square() {
        let mut img = Tensor3::zeros(3, 40, 40).unwrap();
        let b = draw_shape(&mut img, ShapeKind::Square, 20.0, 20.0, 20.0, &[1.0, 0.5, 0.25]);
        assert_eq!(b, BBox::new(0.25, 0.25, 0.75, 0.75));
        assert_eq!(img.get(0, 10, 10), 1.0);
        assert_eq!(img.get(0, 9, 10), 0.0);
        assert_eq!(img.get(2, 29, 29), 0.25);
        assert_eq!(img.get(1, 30, 29), 0.0);
    }

    #[test]
    fn boxes_tightly_bound_filled_pixels() {
        for kind in [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle] {
            let mut img = Tensor3::zeros(1, 64, 64).unwrap();
            let b = draw_shape(&mut img, kind, 30.0, 34.0, 24.0, &[1.0]);
            let filled: Vec<(usize, usize)> = (0..64)
                .flat_map(|y| (0..64).map(move |x| (y, x)))
                .filter(|&(y, x)| img.get(0, y, x) > 0.0)
                .collect();
            let xmin = filled.iter().map(|p| p.1).min().unwrap() as f64 / 64.0;
            let xmax = (filled.iter().map(|p| p.1).max().unwrap() + 1) as f64 / 64.0;
            let ymax = (filled.iter().map(|p| p.0).max().unwrap() + 1) as f64 / 64.0;
            let px = 1.0 / 64.0;
            assert!((xmin - b.xmin).abs() <= px && (xmax - b.xmax).abs() <= px, "{kind:?}");
            assert!((ymax - b.ymax).abs() <= px, "{kind:?}");
        }
    }

    #[test]
    fn samples_are_valid() {
        for s in generate_dataset(&small(9)).unwrap() {
            s.validate(3).unwrap();
            assert!(!s.objects.is_empty() && s.objects.len() <= 3);
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
