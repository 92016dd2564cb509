use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keyed_transforms::{
    derive_site_permutation, permute_planes, BlockShuffle, PermutationVector, SecretKey,
};
use crate::tensor::{FeatureMap, Image, Tensor3};

use super::config::DetectorConfig;
use super::conv::{Conv2d, ConvGrad};
use super::priors::{generate_priors, PriorBox};

const HEAD_INIT_STD: f32 = 0.01;

/// Per-prior class logits (background first) and box offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    classes: usize,
    logits: Vec<f64>,
    offsets: Vec<f64>,
}

impl RawPrediction {
    /// `classes` counts background.
    pub fn new(classes: usize, logits: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::dim("need background plus at least one class"));
        }
        if logits.len() % classes != 0 || offsets.len() != logits.len() / classes * 4 {
            return Err(Error::dim(format!(
                "logits ({}) and offsets ({}) disagree on prior count for {classes} classes",
                logits.len(),
                offsets.len()
            )));
        }
        if logits.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::dim("raw prediction contains non-finite values"));
        }
        Ok(Self {
            classes,
            logits,
            offsets,
        })
    }

    pub fn num_priors(&self) -> usize {
        self.offsets.len() / 4
    }

    pub fn num_classes_with_background(&self) -> usize {
        self.classes
    }

    pub fn logits(&self, prior: usize) -> &[f64] {
        &self.logits[prior * self.classes..(prior + 1) * self.classes]
    }

    pub fn offsets(&self, prior: usize) -> &[f64] {
        &self.offsets[prior * 4..prior * 4 + 4]
    }

    pub fn all_logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn all_offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub(crate) fn all_logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub(crate) fn all_offsets_mut(&mut self) -> &mut [f64] {
        &mut self.offsets
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            classes: self.classes,
            logits: vec![0.0; self.logits.len()],
            offsets: vec![0.0; self.offsets.len()],
        }
    }
}

/// Resolved permutations a key induces on one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Keying {
    site_perms: BTreeMap<usize, PermutationVector>,
    input_shuffle: Option<BlockShuffle>,
}

impl Keying {
    pub fn derive(cfg: &DetectorConfig, key: &SecretKey) -> Result<Self> {
        let mut site_perms = BTreeMap::new();
        for &site in &cfg.encrypted_sites {
            let c = cfg
                .pyramid
                .get(site.wrapping_sub(1))
                .ok_or_else(|| Error::config(format!("site {site} out of range")))?
                .channels;
            site_perms.insert(site, derive_site_permutation(key, site, c)?);
        }
        let input_shuffle = cfg
            .input_block_size
            .map(|m| BlockShuffle::from_key(key, m, cfg.input_channels))
            .transpose()?;
        Ok(Self {
            site_perms,
            input_shuffle,
        })
    }

    /// Keying from explicit permutations, validated against `cfg`.
    pub fn from_parts(
        cfg: &DetectorConfig,
        site_perms: BTreeMap<usize, PermutationVector>,
        input_shuffle: Option<BlockShuffle>,
    ) -> Result<Self> {
        for (&site, p) in &site_perms {
            match cfg.pyramid.get(site.wrapping_sub(1)) {
                Some(st) if st.channels == p.len() => {}
                _ => {
                    return Err(Error::dim(format!(
                        "permutation for site {site} does not fit the config"
                    )))
                }
            }
        }
        Ok(Self {
            site_perms,
            input_shuffle,
        })
    }

    pub fn site_permutation(&self, site: usize) -> Option<&PermutationVector> {
        self.site_perms.get(&site)
    }

    pub fn site_permutations(&self) -> &BTreeMap<usize, PermutationVector> {
        &self.site_perms
    }

    pub fn input_shuffle(&self) -> Option<&BlockShuffle> {
        self.input_shuffle.as_ref()
    }
}

/// Activations at one stage, before and after the keyed permutation.
#[derive(Debug, Clone)]
pub struct SiteActivation {
    pub pre: FeatureMap,
    pub post: FeatureMap,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub raw: RawPrediction,
    /// Input actually fed to stage 1 (after input shuffling, if any).
    pub input: Image,
    pub sites: Vec<SiteActivation>,
    stage_cols: Vec<Vec<f32>>,
    head_cols: Vec<Vec<f32>>,
}

/// Gradients for every layer, stages first then heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ConvGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model.layers().into_iter().map(ConvGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.layers {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: DetectorConfig,
    stages: Vec<Conv2d>,
    heads: Vec<Conv2d>,
    priors: Vec<PriorBox>,
}

/// Builds a model with He-normal stage weights and small-normal head weights.
pub fn build_model(config: DetectorConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_c = config.input_channels;
    let mut stages = Vec::with_capacity(config.pyramid.len());
    for st in &config.pyramid {
        let std = (2.0 / (in_c * 9) as f32).sqrt();
        stages.push(Conv2d::new_normal(&mut rng, in_c, st.channels, st.stride, std));
        in_c = st.channels;
    }
    let heads = config
        .head_levels
        .iter()
        .map(|&s| {
            Conv2d::new_normal(
                &mut rng,
                config.pyramid[s - 1].channels,
                config.head_channels(),
                1,
                HEAD_INIT_STD,
            )
        })
        .collect();
    let priors = generate_priors(&config);
    Ok(Model {
        config,
        stages,
        heads,
        priors,
    })
}

impl Model {
    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn priors(&self) -> &[PriorBox] {
        &self.priors
    }

    pub fn num_sites(&self) -> usize {
        self.stages.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers().into_iter().map(Conv2d::param_count).sum()
    }

    /// All convolution layers, stages first then heads.
    pub fn layers(&self) -> Vec<&Conv2d> {
        self.stages.iter().chain(&self.heads).collect()
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.stages.iter_mut().chain(self.heads.iter_mut())
    }

    /// Rebuilds a model from layer parameters in [`Model::layers`] order.
    pub(crate) fn from_layers(config: DetectorConfig, layers: Vec<Conv2d>) -> Result<Self> {
        let mut template = build_model(config, 0)?;
        let expected: Vec<(usize, usize, usize)> = template
            .layers()
            .iter()
            .map(|l| (l.in_channels, l.out_channels, l.stride))
            .collect();
        let got: Vec<(usize, usize, usize)> = layers
            .iter()
            .map(|l| (l.in_channels, l.out_channels, l.stride))
            .collect();
        if expected != got {
            return Err(Error::Checkpoint(
                "layer shapes do not match the stored config".into(),
            ));
        }
        let n = template.stages.len();
        let mut layers = layers;
        template.heads = layers.split_off(n);
        template.stages = layers;
        Ok(template)
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let want = (
            self.config.input_channels,
            self.config.input_size,
            self.config.input_size,
        );
        if image.shape() != want {
            return Err(Error::dim(format!(
                "model expects input {want:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass; `key` absent means no transform anywhere.
    pub fn forward(&self, image: &Image, key: Option<&SecretKey>) -> Result<RawPrediction> {
        let keying = key.map(|k| Keying::derive(&self.config, k)).transpose()?;
        self.forward_keyed(image, keying.as_ref())
    }

    pub fn forward_keyed(&self, image: &Image, keying: Option<&Keying>) -> Result<RawPrediction> {
        Ok(self.forward_trace(image, keying)?.raw)
    }

    /// Forward pass that keeps every site's activations for hooks and backprop.
    pub fn forward_trace(&self, image: &Image, keying: Option<&Keying>) -> Result<ForwardTrace> {
        self.check_input(image)?;
        let input = match keying.and_then(Keying::input_shuffle) {
            Some(shf) => shf.encrypt(image)?,
            None => image.clone(),
        };
        let mut sites = Vec::with_capacity(self.stages.len());
        let mut stage_cols = Vec::with_capacity(self.stages.len());
        let mut cur = input.clone();
        for (idx, conv) in self.stages.iter().enumerate() {
            let (h, w) = (cur.height(), cur.width());
            let (mut out, col) = conv.forward(cur.as_slice(), h, w);
            for v in &mut out {
                *v = v.max(0.0);
            }
            let (ho, wo) = (conv.out_side(h), conv.out_side(w));
            let pre = Tensor3::from_raw(conv.out_channels, ho, wo, out);
            let post = match keying.and_then(|k| k.site_permutation(idx + 1)) {
                Some(p) => {
                    let mut buf = vec![0.0f32; pre.as_slice().len()];
                    permute_planes(pre.as_slice(), &mut buf, p, ho * wo);
                    Tensor3::from_raw(conv.out_channels, ho, wo, buf)
                }
                None => pre.clone(),
            };
            cur = post.clone();
            sites.push(SiteActivation { pre, post });
            stage_cols.push(col);
        }

        let classes = self.config.num_classes + 1;
        let k = self.config.priors_per_cell;
        let n_priors = self.priors.len();
        let mut logits = Vec::with_capacity(n_priors * classes);
        let mut offsets = Vec::with_capacity(n_priors * 4);
        let mut head_cols = Vec::with_capacity(self.heads.len());
        for (head, &stage) in self.heads.iter().zip(&self.config.head_levels) {
            let feat = &sites[stage - 1].post;
            let (h, w) = (feat.height(), feat.width());
            let (out, col) = head.forward(feat.as_slice(), h, w);
            let plane = h * w;
            for cell in 0..plane {
                for j in 0..k {
                    for c in 0..classes {
                        logits.push(out[(j * classes + c) * plane + cell] as f64);
                    }
                }
                for j in 0..k {
                    for d in 0..4 {
                        offsets.push(out[(k * classes + j * 4 + d) * plane + cell] as f64);
                    }
                }
            }
            head_cols.push(col);
        }
        let raw = RawPrediction::new(classes, logits, offsets).map_err(|_| Error::Diverged {
            iteration: 0,
            detail: "non-finite activations in forward pass".into(),
        })?;
        Ok(ForwardTrace {
            raw,
            input,
            sites,
            stage_cols,
            head_cols,
        })
    }

    /// Backpropagates `grad_raw` (same layout as the trace's prediction).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_raw: &RawPrediction,
        keying: Option<&Keying>,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let n_stages = self.stages.len();
        let classes = self.config.num_classes + 1;
        let k = self.config.priors_per_cell;
        let mut site_grads: Vec<Vec<f32>> = trace
            .sites
            .iter()
            .map(|s| vec![0.0; s.post.as_slice().len()])
            .collect();

        let mut prior_base = 0;
        for (hi, (head, &stage)) in self.heads.iter().zip(&self.config.head_levels).enumerate() {
            let feat = &trace.sites[stage - 1].post;
            let (h, w) = (feat.height(), feat.width());
            let plane = h * w;
            let mut dout = vec![0.0f32; head.out_channels * plane];
            for cell in 0..plane {
                for j in 0..k {
                    let prior = prior_base + cell * k + j;
                    let gl = grad_raw.logits(prior);
                    for c in 0..classes {
                        dout[(j * classes + c) * plane + cell] = gl[c] as f32;
                    }
                    let go = grad_raw.offsets(prior);
                    for d in 0..4 {
                        dout[(k * classes + j * 4 + d) * plane + cell] = go[d] as f32;
                    }
                }
            }
            prior_base += plane * k;
            let dfeat = head
                .backward(&dout, &trace.head_cols[hi], h, w, &mut grads.layers[n_stages + hi], true)
                .expect("input gradient requested");
            for (a, b) in site_grads[stage - 1].iter_mut().zip(&dfeat) {
                *a += b;
            }
        }

        for idx in (0..n_stages).rev() {
            let conv = &self.stages[idx];
            let site = &trace.sites[idx];
            let plane = site.pre.plane_len();
            let dpost = std::mem::take(&mut site_grads[idx]);
            let mut dpre = match keying.and_then(|kk| kk.site_permutation(idx + 1)) {
                Some(p) => {
                    let mut buf = vec![0.0f32; dpost.len()];
                    permute_planes(&dpost, &mut buf, &p.inverse(), plane);
                    buf
                }
                None => dpost,
            };
            for (g, &a) in dpre.iter_mut().zip(site.pre.as_slice()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (h, w) = if idx == 0 {
                (trace.input.height(), trace.input.width())
            } else {
                (trace.sites[idx - 1].post.height(), trace.sites[idx - 1].post.width())
            };
            let dx = conv.backward(&dpre, &trace.stage_cols[idx], h, w, &mut grads.layers[idx], idx > 0);
            if let Some(dx) = dx {
                for (a, b) in site_grads[idx - 1].iter_mut().zip(&dx) {
                    *a += b;
                }
            }
        }
        grads
    }
}
