use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor3};

use super::{Object, Sample};

const CROP_TRIES: usize = 10;

/// Area-averaging weights mapping `src` samples onto `dst` samples.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut ws = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    ws.push((i, overlap / scale));
                }
                i += 1;
            }
            ws
        })
        .collect()
}

/// Resizes each channel to `out_h × out_w` by exact area averaging.
pub fn resize_image(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let (c, h, w) = img.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize target must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let wx = area_weights(w, out_w);
    let wy = area_weights(h, out_h);
    let src = img.as_slice();
    let mut tmp = vec![0.0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..][..w];
            for (ox, ws) in wx.iter().enumerate() {
                tmp[(ch * h + y) * out_w + ox] = ws.iter().map(|&(i, a)| row[i] as f64 * a).sum();
            }
        }
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for ws in &wy {
            for ox in 0..out_w {
                let v: f64 = ws.iter().map(|&(y, a)| tmp[(ch * h + y) * out_w + ox] * a).sum();
                out.push(v as f32);
            }
        }
    }
    Ok(Tensor3::from_raw(c, out_h, out_w, out))
}

/// Resizes to `target × target`; normalized boxes carry over unchanged.
pub fn resize_and_normalize(sample: &Sample, target: usize) -> Result<Sample> {
    Ok(Sample {
        image: resize_image(&sample.image, target, target)?,
        objects: sample.objects.clone(),
    })
}

/// Horizontal mirror of image and boxes.
pub fn hflip(sample: &Sample) -> Sample {
    let (c, h, w) = sample.image.shape();
    let src = sample.image.as_slice();
    let mut out = Vec::with_capacity(src.len());
    for row in src.chunks_exact(w) {
        out.extend(row.iter().rev());
    }
    Sample {
        image: Tensor3::from_raw(c, h, w, out),
        objects: sample
            .objects
            .iter()
            .map(|o| Object {
                bbox: o.bbox.hflip(),
                ..*o
            })
            .collect(),
    }
}

/// Crops the pixel rectangle `(x0, y0, cw, ch)` and resizes it back to the
/// original size. Objects whose centers fall outside are dropped; the rest
/// are clipped to the crop. Returns `None` when no object survives.
pub fn crop(sample: &Sample, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Option<Sample>> {
    let (c, h, w) = sample.image.shape();
    if cw == 0 || ch == 0 || x0 + cw > w || y0 + ch > h {
        return Err(Error::dim(format!(
            "crop ({x0}, {y0}, {cw}, {ch}) outside {w}×{h} image"
        )));
    }
    let rect = BBox::new(
        x0 as f64 / w as f64,
        y0 as f64 / h as f64,
        (x0 + cw) as f64 / w as f64,
        (y0 + ch) as f64 / h as f64,
    );
    let (rw, rh) = (rect.width(), rect.height());
    let objects: Vec<Object> = sample
        .objects
        .iter()
        .filter(|o| {
            let (cx, cy) = o.bbox.center();
            cx > rect.xmin && cx < rect.xmax && cy > rect.ymin && cy < rect.ymax
        })
        .map(|o| Object {
            bbox: BBox::new(
                (o.bbox.xmin.max(rect.xmin) - rect.xmin) / rw,
                (o.bbox.ymin.max(rect.ymin) - rect.ymin) / rh,
                (o.bbox.xmax.min(rect.xmax) - rect.xmin) / rw,
                (o.bbox.ymax.min(rect.ymax) - rect.ymin) / rh,
            )
            .clip_unit(),
            ..*o
        })
        .filter(|o| o.bbox.is_proper())
        .collect();
    if objects.is_empty() && !sample.objects.is_empty() {
        return Ok(None);
    }
    let src = sample.image.as_slice();
    let mut region = Vec::with_capacity(c * ch * cw);
    for chn in 0..c {
        for y in y0..y0 + ch {
            region.extend_from_slice(&src[(chn * h + y) * w + x0..][..cw]);
        }
    }
    let region = Tensor3::from_raw(c, ch, cw, region);
    Ok(Some(Sample {
        image: resize_image(&region, h, w)?,
        objects,
    }))
}

/// Brightness and contrast scaling, each factor in `[0.8, 1.2]`.
pub fn photometric(img: &Image, brightness: f32, contrast: f32) -> Image {
    let (c, h, w) = img.shape();
    let n = img.plane_len();
    let mut out = Vec::with_capacity(img.as_slice().len());
    for ch in 0..c {
        let plane = img.channel(ch);
        let mean = plane.iter().sum::<f32>() / n as f32;
        out.extend(
            plane
                .iter()
                .map(|&v| (((v - mean) * contrast + mean) * brightness).clamp(0.0, 1.0)),
        );
    }
    Tensor3::from_raw(c, h, w, out)
}

fn random_crop(sample: &Sample, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (_, h, w) = sample.image.shape();
    for _ in 0..CROP_TRIES {
        let sw = rng.random_range(0.5..=1.0f64);
        let sh = rng.random_range(0.5..=1.0f64);
        if !(0.5..=2.0).contains(&(sw / sh)) {
            continue;
        }
        let cw = ((sw * w as f64).round() as usize).clamp(1, w);
        let ch = ((sh * h as f64).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        if let Some(s) = crop(sample, x0, y0, cw, ch)? {
            return Ok(s);
        }
    }
    Ok(sample.clone())
}

/// SSD-style augmentation: random crop (p = 0.5, up to 10 tries before
/// leaving the sample uncropped), horizontal flip (p = 0.5), then brightness
/// and contrast jitter within ±20%.
pub fn augment(sample: &Sample, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = if rng.random_bool(0.5) {
        random_crop(sample, &mut rng)?
    } else {
        sample.clone()
    };
    if rng.random_bool(0.5) {
        s = hflip(&s);
    }
    let brightness = rng.random_range(0.8..=1.2f32);
    let contrast = rng.random_range(0.8..=1.2f32);
    s.image = photometric(&s.image, brightness, contrast);
    Ok(s)
}
