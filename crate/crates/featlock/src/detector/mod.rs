//! Toy multi-scale single-shot detector with keyed feature-map sites.

mod checkpoint;
mod config;
mod conv;
mod decode;
mod model;
mod priors;

pub use checkpoint::{Checkpoint, StoredTensor};
pub use config::{DetectorConfig, StageSpec};
pub use conv::{Conv2d, ConvGrad};
pub use decode::{decode_and_nms, decode_box, encode_box, Detection, NmsParams};
pub(crate) use decode::softmax;
pub use model::{
    build_model, ForwardTrace, Gradients, Keying, Model, RawPrediction, SiteActivation,
};
pub use priors::{generate_priors, PriorBox};
