use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One downsampling stage: 3×3 convolution (padding 1) followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    pub input_channels: usize,
    /// Object classes, background excluded.
    pub num_classes: usize,
    pub pyramid: Vec<StageSpec>,
    /// 1-based stage indices feeding detection heads, shallow to deep.
    pub head_levels: Vec<usize>,
    /// 1-based stage indices whose output activations are channel-permuted.
    pub encrypted_sites: BTreeSet<usize>,
    pub priors_per_cell: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Block size of input pixel shuffling, when the model is protected that way.
    #[serde(default)]
    pub input_block_size: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let pyramid = [16, 32, 64, 64, 64, 64]
            .into_iter()
            .map(|channels| StageSpec {
                channels,
                stride: 2,
            })
            .collect();
        Self {
            input_size: 96,
            input_channels: 3,
            num_classes: 3,
            pyramid,
            head_levels: vec![4, 5, 6],
            encrypted_sites: BTreeSet::new(),
            priors_per_cell: 2,
            min_scale: 0.2,
            max_scale: 0.8,
            input_block_size: None,
        }
    }
}

impl DetectorConfig {
    pub fn with_sites(mut self, sites: impl IntoIterator<Item = usize>) -> Self {
        self.encrypted_sites = sites.into_iter().collect();
        self
    }

    pub fn num_stages(&self) -> usize {
        self.pyramid.len()
    }

    /// Spatial side of each stage's output, in order.
    pub fn stage_grids(&self) -> Vec<usize> {
        let mut side = self.input_size;
        self.pyramid
            .iter()
            .map(|s| {
                side = (side - 1) / s.stride + 1;
                side
            })
            .collect()
    }

    /// Channels produced by each head (class logits incl. background, then offsets).
    pub fn head_channels(&self) -> usize {
        self.priors_per_cell * (self.num_classes + 1 + 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::config("input size and channels must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be at least 1"));
        }
        if self.pyramid.is_empty() {
            return Err(Error::config("pyramid must have at least one stage"));
        }
        if self.pyramid.iter().any(|s| s.channels == 0 || s.stride == 0) {
            return Err(Error::config("stage widths and strides must be positive"));
        }
        if self.head_levels.is_empty() {
            return Err(Error::config("head_levels must not be empty"));
        }
        let l = self.num_stages();
        if self.head_levels.iter().any(|&h| h == 0 || h > l) {
            return Err(Error::config(format!("head levels must lie in 1..={l}")));
        }
        if self.head_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("head levels must be strictly increasing"));
        }
        if self.encrypted_sites.iter().any(|&s| s == 0 || s > l) {
            return Err(Error::config(format!("encrypted sites must lie in 1..={l}")));
        }
        if self.priors_per_cell == 0 {
            return Err(Error::config("priors_per_cell must be positive"));
        }
        if !(self.min_scale > 0.0 && self.max_scale >= self.min_scale && self.max_scale.is_finite()) {
            return Err(Error::config("prior scales must satisfy 0 < min_scale <= max_scale"));
        }
        if let Some(m) = self.input_block_size {
            if m == 0 || self.input_size % m != 0 {
                return Err(Error::InvalidDimension(format!(
                    "block size {m} does not divide input size {}",
                    self.input_size
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let cfg = DetectorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_grids(), vec![48, 24, 12, 6, 3, 2]);
        assert_eq!(cfg.head_channels(), 16);
    }

    #[test]
    fn rejects_bad_fields() {
        let mut c = DetectorConfig::default().with_sites([7]);
        assert!(c.validate().is_err());
        c = DetectorConfig::default();
        c.head_levels.clear();
        assert!(c.validate().is_err());
        c = DetectorConfig::default();
        c.pyramid[2].channels = 0;
        assert!(c.validate().is_err());
        c = DetectorConfig::default();
        c.input_block_size = Some(7);
        assert!(matches!(c.validate(), Err(Error::InvalidDimension(_))));
    }
}
