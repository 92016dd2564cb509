use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor3};

use super::voc::{parse_voc_annotation, VocObject, VocRecord};
use super::{Dataset, Object, Sample};

const MANIFEST: &str = "manifest.json";

/// `manifest.json` at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub train: Dataset,
    pub test: Dataset,
}

fn to_png(img: &Image, path: &Path) -> Result<()> {
    let (c, h, w) = img.shape();
    if c != 3 {
        return Err(Error::dim(format!("PNG export expects 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for ch in 0..3 {
            px.0[ch] = (img.get(ch, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads an image file as a (3, H, W) tensor in [0, 1].
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor3::from_fn(3, h, w, |c, y, x| img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0)
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    to_png(img, path)
}

fn write_split(dir: &Path, prefix: &str, samples: &[Sample], classes: &[String]) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{prefix}_{i:06}");
        let (_, h, w) = s.image.shape();
        let png = format!("{id}.png");
        to_png(&s.image, &dir.join("images").join(&png))?;
        let record = VocRecord {
            filename: png,
            width: w as u32,
            height: h as u32,
            depth: 3,
            objects: s
                .objects
                .iter()
                .map(|o| VocObject::from_normalized(&classes[o.label], &o.bbox, w as u32, h as u32, o.difficult))
                .collect(),
        };
        let xml_path = dir.join("annotations").join(format!("{id}.xml"));
        fs::write(&xml_path, record.to_xml()).map_err(|e| Error::io(&xml_path, e))?;
        ids.push(id);
    }
    Ok(ids)
}

/// Writes `images/*.png`, `annotations/*.xml` and `manifest.json` under `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, classes: &[String], train: &[Sample], test: &[Sample]) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    for sub in ["images", "annotations"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = DatasetManifest {
        classes: classes.to_vec(),
        train: write_split(dir, "train", train, classes)?,
        test: write_split(dir, "test", test, classes)?,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn load_sample(dir: &Path, id: &str, classes: &[String]) -> Result<Sample> {
    let xml_path: PathBuf = dir.join("annotations").join(format!("{id}.xml"));
    let text = fs::read_to_string(&xml_path).map_err(|e| Error::io(&xml_path, e))?;
    let record = parse_voc_annotation(&text)?;
    let image = read_image(&dir.join("images").join(&record.filename))?;
    let (_, h, w) = image.shape();
    if (w as u32, h as u32) != (record.width, record.height) {
        return Err(Error::Schema(format!(
            "{id}: annotation size {}×{} disagrees with image {w}×{h}",
            record.width, record.height
        )));
    }
    let objects = record
        .objects
        .iter()
        .map(|o| {
            let label = classes
                .iter()
                .position(|c| c == &o.name)
                .ok_or_else(|| Error::Schema(format!("{id}: unknown class {:?}", o.name)))?;
            Ok(Object {
                bbox: o.normalized(record.width, record.height),
                label,
                difficult: o.difficult,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample { image, objects })
}

/// Loads a dataset written by [`save_dataset`] or laid out the same way.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LoadedDataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let load = |ids: &[String]| -> Result<Vec<Sample>> {
        ids.iter().map(|id| load_sample(dir, id, &manifest.classes)).collect()
    };
    Ok(LoadedDataset {
        train: Dataset {
            classes: manifest.classes.clone(),
            samples: load(&manifest.train)?,
        },
        test: Dataset {
            classes: manifest.classes.clone(),
            samples: load(&manifest.test)?,
        },
    })
}
