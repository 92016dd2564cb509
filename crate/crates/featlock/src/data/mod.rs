//! Detection samples: synthetic generation, VOC ingestion, resizing and
//! augmentation, and the on-disk dataset layout.

mod disk;
mod synth;
mod transform;
mod voc;

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::tensor::Image;

pub use disk::{load_dataset, save_dataset, DatasetManifest, LoadedDataset};
pub use disk::{read_image, write_image};
pub use synth::{draw_shape, generate_dataset, generate_dataset_with, ShapeKind, SynthSpec};
pub use transform::{augment, crop, hflip, photometric, resize_and_normalize, resize_image};
pub use voc::{parse_voc_annotation, VocObject, VocRecord};

/// One ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub bbox: BBox,
    pub label: usize,
    #[serde(default)]
    pub difficult: bool,
}

/// An image with its annotated objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub objects: Vec<Object>,
}

impl Sample {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for o in &self.objects {
            if !o.bbox.is_normalized() {
                return Err(Error::InvalidBox(format!("{:?} is not inside the unit square", o.bbox)));
            }
            if o.label >= num_classes {
                return Err(Error::Schema(format!(
                    "label {} out of range for {num_classes} classes",
                    o.label
                )));
            }
        }
        Ok(())
    }
}

/// Samples plus the class names their labels index into.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Generates a synthetic dataset from `spec`.
    pub fn synthetic(spec: &SynthSpec) -> Result<Self> {
        Ok(Self {
            classes: spec.class_names(),
            samples: generate_dataset(spec)?,
        })
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Self {
        Self {
            classes: self.classes.clone(),
            samples: self.samples.iter().take(n).cloned().collect(),
        }
    }
}
