//! The four networks: feature extractor `F`, attention gate `AL`, gaze
//! predictor `G` and intervention classifier `C`.

pub mod layers;
pub mod params;

use ndarray::{Array2, Array4, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{GazeLabel, Image};
use crate::error::{Error, Result};
use crate::rng::{rng_for, tag, Rng};
use layers::{relu, sigmoid, Conv2d, ConvCache, GroupNorm, Linear, NormCache};
pub use params::{NetId, ParamStore, TensorSpec};

/// Architecture hyperparameters shared by all four networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub image_size: usize,
    /// Output channels of each stride-2 conv block; the last entry is the
    /// feature dimension N.
    pub channels: Vec<usize>,
    pub norm_groups: usize,
    /// Attention bottleneck ratio; N must be divisible by it.
    pub reduction: usize,
    pub gaze_hidden: usize,
    pub classifier_hidden: usize,
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::desk()
    }
}

impl NetConfig {
    /// 4 blocks 16-32-64-128 on 64x64 inputs.
    pub fn desk() -> Self {
        NetConfig {
            image_size: 64,
            channels: vec![16, 32, 64, 128],
            norm_groups: 4,
            reduction: 8,
            gaze_hidden: 64,
            classifier_hidden: 64,
            input_mean: [0.5; 3],
            input_std: [0.5; 3],
        }
    }

    /// Smallest preset used for finite-difference checks: 16x16 input, N = 8.
    pub fn tiny() -> Self {
        NetConfig {
            image_size: 16,
            channels: vec![4, 8],
            norm_groups: 2,
            reduction: 8,
            gaze_hidden: 6,
            classifier_hidden: 6,
            input_mean: [0.5; 3],
            input_std: [0.5; 3],
        }
    }

    /// ResNet-18 stage widths at 224x224 with ImageNet normalization.
    pub fn full() -> Self {
        NetConfig {
            image_size: 224,
            channels: vec![64, 128, 256, 512],
            norm_groups: 8,
            reduction: 8,
            gaze_hidden: 256,
            classifier_hidden: 256,
            input_mean: [0.485, 0.456, 0.406],
            input_std: [0.229, 0.224, 0.225],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(NetConfig::tiny()),
            "desk" => Ok(NetConfig::desk()),
            "full" => Ok(NetConfig::full()),
            other => Err(Error::Config(format!("net preset '{other}' unknown"))),
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::Config(format!("net.{f}: {m}")));
        if self.channels.is_empty() {
            return err("channels", "at least one conv block required".into());
        }
        if self.norm_groups == 0 {
            return err("norm_groups", "must be positive".into());
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % self.norm_groups != 0) {
            return err("channels", format!("{c} not divisible by norm_groups {}", self.norm_groups));
        }
        let n = self.feature_dim();
        if self.reduction == 0 || !n.is_multiple_of(self.reduction) {
            return err("reduction", format!("feature dim {n} not divisible by {}", self.reduction));
        }
        let min_size = 1usize << self.channels.len();
        if self.image_size < min_size {
            return err("image_size", format!("{} too small for {} blocks", self.image_size, self.channels.len()));
        }
        if self.gaze_hidden == 0 || self.classifier_hidden == 0 {
            return err("gaze_hidden", "hidden widths must be positive".into());
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return err("input_std", "must be positive".into());
        }
        Ok(())
    }
}

/// Stack images `(H, W, 3)` into a normalized `(B, 3, H, W)` batch.
pub fn to_batch(images: &[&Image], cfg: &NetConfig) -> Result<Array4<f64>> {
    let s = cfg.image_size;
    let mut out = Array4::<f64>::zeros((images.len(), 3, s, s));
    for (b, img) in images.iter().enumerate() {
        if img.dim() != (s, s, 3) {
            return Err(Error::Dimension(format!(
                "image {b} has shape {:?}, expected ({s}, {s}, 3)",
                img.dim()
            )));
        }
        for c in 0..3 {
            let (m, sd) = (cfg.input_mean[c], cfg.input_std[c]);
            let mut plane = out.index_axis_mut(Axis(0), b);
            let mut plane = plane.index_axis_mut(Axis(0), c);
            Zip::from(&mut plane)
                .and(&img.index_axis(Axis(2), c))
                .for_each(|o, &v| *o = (v - m) / sd);
        }
    }
    Ok(out)
}

/// Conv trunk: stride-2 conv, group norm and ReLU per block, then global
/// average pooling to an N-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub store: ParamStore,
    blocks: Vec<(Conv2d, GroupNorm)>,
}

pub struct TrunkCache {
    blocks: Vec<(ConvCache, NormCache, Array4<f64>)>,
}

impl FeatureExtractor {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new(NetId::F);
        let mut cin = 3;
        let blocks = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let conv = Conv2d::new(&mut store, &format!("block{i}.conv"), cin, cout, 3, 2, 1, rng);
                let norm = GroupNorm::new(&mut store, &format!("block{i}.norm"), cout, cfg.norm_groups);
                cin = cout;
                (conv, norm)
            })
            .collect();
        FeatureExtractor { store, blocks }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<(Array2<f64>, TrunkCache)> {
        if x.dim().1 != 3 {
            return Err(Error::Dimension(format!("expected 3 input channels, got {}", x.dim().1)));
        }
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (conv, norm) in &self.blocks {
            let (y, cc) = conv.forward(&self.store, &h);
            let (mut y, nc) = norm.forward(&self.store, &y);
            relu(&mut y);
            h = y.clone();
            caches.push((cc, nc, y));
        }
        let (b, c, hh, ww) = h.dim();
        let pooled = h
            .into_shape((b, c, hh * ww))
            .expect("pool reshape")
            .mean_axis(Axis(2))
            .expect("non-empty spatial extent");
        Ok((pooled, TrunkCache { blocks: caches }))
    }

    /// Accumulates parameter gradients for `dz = dL/dz` and optionally
    /// returns `dL/dx`.
    pub fn backward(
        &self,
        cache: &TrunkCache,
        dz: &Array2<f64>,
        grads: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Array4<f64>> {
        let last = &cache.blocks.last().expect("at least one block").2;
        let (b, c, h, w) = last.dim();
        let scale = 1.0 / (h * w) as f64;
        let mut dh = Array4::<f64>::from_shape_fn((b, c, h, w), |(bi, ci, _, _)| dz[[bi, ci]] * scale);
        let mut dx = None;
        for (i, ((conv, norm), (cc, nc, out))) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            Zip::from(&mut dh).and(out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            });
            let dn = norm.backward(&self.store, nc, &dh, grads);
            let need = i > 0 || need_input_grad;
            match conv.backward(&self.store, cc, &dn, grads, need) {
                Some(d) if i > 0 => dh = d,
                other => dx = other,
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Multi-layer perceptron with ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub store: ParamStore,
    layers: Vec<Linear>,
    output: OutputActivation,
}

pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Mlp {
    /// `scales[i]` multiplies the `1/sqrt(fan_in)` init bound of layer `i`;
    /// a zero scale zero-initializes that layer's weights.
    pub fn new(
        owner: NetId,
        dims: &[usize],
        scales: &[f64],
        output: OutputActivation,
        rng: &mut Rng,
    ) -> Self {
        let mut store = ParamStore::new(owner);
        let layers = dims
            .windows(2)
            .zip(scales)
            .enumerate()
            .map(|(i, (d, &sc))| Linear::new(&mut store, &format!("fc{i}"), d[0], d[1], sc, rng))
            .collect();
        Mlp { store, layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").outputs
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<MlpCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{} expects {} inputs, got {}",
                self.store.owner(),
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&self.store, &h.view());
            if i + 1 < self.layers.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        if self.output == OutputActivation::Sigmoid {
            h.mapv_inplace(sigmoid);
        }
        Ok(MlpCache { inputs, output: h })
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let mut d = dy.clone();
        if self.output == OutputActivation::Sigmoid {
            Zip::from(&mut d).and(&cache.output).for_each(|g, &s| *g *= s * (1.0 - s));
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let dx = layer.backward(&self.store, &x.view(), &d, grads);
            d = if i > 0 {
                // x is the ReLU output of the previous layer
                let mut dx = dx;
                Zip::from(&mut dx).and(x).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                });
                dx
            } else {
                dx
            };
        }
        d
    }
}

/// Parameters of all four networks plus the architecture that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CaugeModel {
    pub config: NetConfig,
    pub use_attention: bool,
    pub f: FeatureExtractor,
    pub al: Mlp,
    pub g: Mlp,
    pub c: Mlp,
}

impl CaugeModel {
    /// Fan-in scaled init; every bias and the whole last layer of `G` start
    /// at zero, so an untrained model predicts (0, 0).
    pub fn new(config: &NetConfig, use_attention: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.feature_dim();
        let he = 6f64.sqrt();
        let f = FeatureExtractor::new(config, &mut rng_for(seed, &[tag("init"), tag("F")]));
        let al = Mlp::new(
            NetId::AL,
            &[n, n / config.reduction, n],
            &[1.0, 1.0],
            OutputActivation::Sigmoid,
            &mut rng_for(seed, &[tag("init"), tag("AL")]),
        );
        let g = Mlp::new(
            NetId::G,
            &[n, config.gaze_hidden, 2],
            &[he, 0.0],
            OutputActivation::Identity,
            &mut rng_for(seed, &[tag("init"), tag("G")]),
        );
        let c = Mlp::new(
            NetId::C,
            &[n, config.classifier_hidden, 1],
            &[he, 1.0],
            OutputActivation::Identity,
            &mut rng_for(seed, &[tag("init"), tag("C")]),
        );
        Ok(CaugeModel { config: config.clone(), use_attention, f, al, g, c })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn store(&self, id: NetId) -> &ParamStore {
        match id {
            NetId::F => &self.f.store,
            NetId::AL => &self.al.store,
            NetId::G => &self.g.store,
            NetId::C => &self.c.store,
        }
    }

    pub fn store_mut(&mut self, id: NetId) -> &mut ParamStore {
        match id {
            NetId::F => &mut self.f.store,
            NetId::AL => &mut self.al.store,
            NetId::G => &mut self.g.store,
            NetId::C => &mut self.c.store,
        }
    }

    pub const ALL: [NetId; 4] = [NetId::F, NetId::AL, NetId::G, NetId::C];

    pub fn fingerprint(&self) -> String {
        Self::ALL.iter().map(|&id| self.store(id).fingerprint()).collect::<Vec<_>>().join(":")
    }

    /// Add uniform noise in `±scale` to every parameter. Used to move the
    /// model off its structured init (zero layers) for gradient checks.
    pub fn perturb(&mut self, seed: u64, scale: f64) {
        for id in Self::ALL {
            let mut rng = rng_for(seed, &[tag("perturb"), id as u64]);
            self.store_mut(id)
                .values_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-scale..scale));
        }
    }

    pub fn features(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        Ok(self.f.forward(x)?.0)
    }

    /// Attention weights, or all ones when the gate is disabled.
    pub fn attention(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if self.use_attention {
            Ok(self.al.forward(&z.view())?.output)
        } else {
            Ok(Array2::ones(z.dim()))
        }
    }

    pub fn predict_from_features(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let zw = z * &self.attention(z)?;
        Ok(self.g.forward(&zw.view())?.output)
    }

    /// Classifier logits for a batch of features.
    pub fn classify_logits(&self, z: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.c.forward(&z.view())?.output.iter().copied().collect())
    }

    /// `G(F(x) * AL(F(x)))` on a normalized batch; `C` is not involved.
    pub fn forward_inference(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let z = self.features(x)?;
        self.predict_from_features(&z)
    }

    /// Inference on raw images, returning one label estimate per image.
    pub fn predict_images(&self, images: &[&Image]) -> Result<Vec<GazeLabel>> {
        let x = to_batch(images, &self.config)?;
        let y = self.forward_inference(&x)?;
        Ok(y.outer_iter().map(|r| GazeLabel { pitch: r[0], yaw: r[1] }).collect())
    }
}
