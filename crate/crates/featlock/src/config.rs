//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::DEFAULT_WRONG_KEYS;
use crate::data::{load_dataset, resize_and_normalize, Dataset, LoadedDataset, SynthSpec};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Where training and test images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic { train: SynthSpec, test: SynthSpec },
    /// A directory written by `save_dataset` (or laid out the same way).
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub n_wrong_keys: usize,
    pub seed: u64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            n_wrong_keys: DEFAULT_WRONG_KEYS,
            seed: 0,
        }
    }
}

/// A complete, reproducible experiment. Protection (encrypted sites or input
/// block size) is part of `detector`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Run name; outputs go to `<output_dir>/<name>/`.
    pub name: String,
    pub dataset: DatasetSource,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub attack: AttackSettings,
    pub output_dir: PathBuf,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            name: "default".into(),
            dataset: DatasetSource::Synthetic {
                train: SynthSpec::train(0),
                test: SynthSpec::test(0),
            },
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            attack: AttackSettings::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Materializes the train and test splits at the detector's input size.
    pub fn load_data(&self) -> Result<LoadedDataset> {
        match &self.dataset {
            DatasetSource::Synthetic { train, test } => Ok(LoadedDataset {
                train: Dataset::synthetic(train)?,
                test: Dataset::synthetic(test)?,
            }),
            DatasetSource::Directory { path } => {
                let mut data = load_dataset(path)?;
                for split in [&mut data.train, &mut data.test] {
                    for s in &mut split.samples {
                        *s = resize_and_normalize(s, self.detector.input_size)?;
                    }
                }
                Ok(data)
            }
        }
    }

    /// Sets every seed (initialization, training, attack) to `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.attack.seed = seed;
    }

    pub fn is_protected(&self) -> bool {
        !self.detector.encrypted_sites.is_empty() || self.detector.input_block_size.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let name_ok = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && self.name != "."
            && self.name != "..";
        if !name_ok {
            return Err(Error::config(format!(
                "run name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        self.detector.validate()?;
        self.train.validate()?;
        if self.attack.n_wrong_keys == 0 {
            return Err(Error::config("attack.n_wrong_keys must be at least 1"));
        }
        match &self.dataset {
            DatasetSource::Synthetic { train, test } => {
                for spec in [train, test] {
                    spec.validate()?;
                    if spec.image_size != self.detector.input_size {
                        return Err(Error::config(format!(
                            "synthetic image size {} differs from detector input size {}",
                            spec.image_size, self.detector.input_size
                        )));
                    }
                    if spec.classes.len() != self.detector.num_classes {
                        return Err(Error::config(format!(
                            "synthetic spec has {} classes, detector expects {}",
                            spec.classes.len(),
                            self.detector.num_classes
                        )));
                    }
                }
            }
            DatasetSource::Directory { path } => {
                if !path.join("manifest.json").is_file() {
                    return Err(Error::config(format!(
                        "dataset directory {} has no manifest.json",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}
