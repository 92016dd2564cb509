use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::DetectorConfig;
use super::conv::Conv2d;
use super::model::Model;

const FORMAT: &str = "featlock-checkpoint";
const VERSION: u32 = 1;

/// A named parameter array; `data` is base64 of little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

/// Self-describing model archive. Holds the key fingerprint, never the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: DetectorConfig,
    pub train_seed: u64,
    pub iterations: usize,
    pub encrypted_sites: Vec<usize>,
    pub key_fingerprint: Option<String>,
    pub tensors: Vec<StoredTensor>,
}

fn encode_f32(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32(s: &str, len: usize, name: &str) -> Result<Vec<f32>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
    if bytes.len() != len * 4 {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: expected {len} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn layer_name(cfg: &DetectorConfig, i: usize) -> String {
    let n = cfg.num_stages();
    if i < n {
        format!("stage{}", i + 1)
    } else {
        format!("head{}", cfg.head_levels[i - n])
    }
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        train_seed: u64,
        iterations: usize,
        key_fingerprint: Option<String>,
    ) -> Self {
        let cfg = model.config().clone();
        let mut tensors = Vec::new();
        for (i, l) in model.layers().iter().enumerate() {
            let name = layer_name(&cfg, i);
            tensors.push(StoredTensor {
                name: format!("{name}.weight"),
                shape: vec![l.out_channels, l.in_channels, 3, 3],
                data: encode_f32(&l.weight),
            });
            tensors.push(StoredTensor {
                name: format!("{name}.bias"),
                shape: vec![l.out_channels],
                data: encode_f32(&l.bias),
            });
        }
        Self {
            format: FORMAT.into(),
            version: VERSION,
            encrypted_sites: cfg.encrypted_sites.iter().copied().collect(),
            config: cfg,
            train_seed,
            iterations,
            key_fingerprint,
            tensors,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let sites: Vec<usize> = self.config.encrypted_sites.iter().copied().collect();
        if sites != self.encrypted_sites {
            return Err(Error::Checkpoint(
                "encrypted_sites disagrees with the config echo".into(),
            ));
        }
        self.config.validate()?;
        let template = super::model::build_model(self.config.clone(), 0)?;
        let shapes: Vec<(usize, usize, usize)> = template
            .layers()
            .iter()
            .map(|l| (l.in_channels, l.out_channels, l.stride))
            .collect();
        if self.tensors.len() != shapes.len() * 2 {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                shapes.len() * 2,
                self.tensors.len()
            )));
        }
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, &(in_c, out_c, stride)) in shapes.iter().enumerate() {
            let w = &self.tensors[2 * i];
            let b = &self.tensors[2 * i + 1];
            let name = layer_name(&self.config, i);
            if w.name != format!("{name}.weight") || b.name != format!("{name}.bias") {
                return Err(Error::Checkpoint(format!("unexpected tensor order at {name}")));
            }
            layers.push(Conv2d {
                in_channels: in_c,
                out_channels: out_c,
                stride,
                weight: decode_f32(&w.data, out_c * in_c * 9, &w.name)?,
                bias: decode_f32(&b.data, out_c, &b.name)?,
            });
        }
        Model::from_layers(self.config.clone(), layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::build_model;

    #[test]
    fn round_trip_is_exact() {
        let cfg = DetectorConfig::default().with_sites([2]);
        let m = build_model(cfg, 7).unwrap();
        let ck = Checkpoint::from_model(&m, 7, 0, Some("abc".into()));
        let back: Checkpoint = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.encrypted_sites, vec![2]);
    }

    #[test]
    fn corrupted_tensor_rejected() {
        let m = build_model(DetectorConfig::default(), 7).unwrap();
        let mut ck = Checkpoint::from_model(&m, 7, 0, None);
        ck.tensors[0].data = encode_f32(&[1.0, 2.0]);
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    }
}
