//! Label-preserving interventions on the non-causal image factors.
//!
//! Two schemes are provided: an AugMix-style mixture of photometric
//! augmentation chains (no spatial warps exist in the op set, so gaze labels
//! survive unchanged) and a Fourier amplitude blend with a donor image.

use std::collections::HashMap;
use std::fmt;

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Dirichlet, Distribution};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Image, ImageSample};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Photometric operations available to augmentation chains. The list is closed:
/// there is intentionally no shear, translate or rotate variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotometricOp {
    Autocontrast,
    Equalize,
    Posterize,
    Solarize,
    Color,
    Contrast,
    Brightness,
    Sharpness,
}

pub const ALLOWED_OPS: [PhotometricOp; 8] = [
    PhotometricOp::Autocontrast,
    PhotometricOp::Equalize,
    PhotometricOp::Posterize,
    PhotometricOp::Solarize,
    PhotometricOp::Color,
    PhotometricOp::Contrast,
    PhotometricOp::Brightness,
    PhotometricOp::Sharpness,
];

/// Enhancement factor change per unit of sampled level (levels run 0..10).
const ENHANCE_PER_LEVEL: f64 = 0.09;
const MIN_ENHANCE_FACTOR: f64 = 0.1;

impl PhotometricOp {
    pub fn name(self) -> &'static str {
        match self {
            PhotometricOp::Autocontrast => "autocontrast",
            PhotometricOp::Equalize => "equalize",
            PhotometricOp::Posterize => "posterize",
            PhotometricOp::Solarize => "solarize",
            PhotometricOp::Color => "color",
            PhotometricOp::Contrast => "contrast",
            PhotometricOp::Brightness => "brightness",
            PhotometricOp::Sharpness => "sharpness",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALLOWED_OPS
            .iter()
            .copied()
            .find(|op| op.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown photometric op '{name}'")))
    }

    /// Magnitude that leaves every image unchanged, where one exists.
    pub fn neutral_magnitude(self) -> Option<f64> {
        match self {
            PhotometricOp::Solarize => Some(1.0),
            PhotometricOp::Color
            | PhotometricOp::Contrast
            | PhotometricOp::Brightness
            | PhotometricOp::Sharpness => Some(1.0),
            _ => None,
        }
    }

    /// Draw an op magnitude for the given severity (1..=10).
    ///
    /// A level is drawn uniformly from `[0.1, severity]`, then mapped:
    /// posterize keeps `4 - floor(level * 4 / 10)` bits (at least 1),
    /// solarize uses threshold `1 - level / 10`, enhancement ops use factor
    /// `1 ± 0.09 * level` with a random sign, floored at 0.1. Autocontrast and
    /// equalize take no magnitude.
    pub fn sample_magnitude(self, severity: u32, rng: &mut Rng) -> f64 {
        let level = rng.gen_range(0.1..=severity.max(1) as f64);
        match self {
            PhotometricOp::Autocontrast | PhotometricOp::Equalize => 0.0,
            PhotometricOp::Posterize => (4 - (level * 4.0 / 10.0) as i32).max(1) as f64,
            PhotometricOp::Solarize => 1.0 - level / 10.0,
            _ => {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                (1.0 + sign * ENHANCE_PER_LEVEL * level).max(MIN_ENHANCE_FACTOR)
            }
        }
    }

    /// Apply the op with an explicit magnitude. Output is clipped to `[0, 1]`.
    ///
    /// Magnitudes: posterize takes a bit count in 1..=8, solarize a threshold
    /// (pixels strictly above it are inverted), enhancement ops a blend factor
    /// where 1.0 is the identity.
    pub fn apply(self, img: &Image, magnitude: f64) -> Image {
        let out = match self {
            PhotometricOp::Autocontrast => autocontrast(img),
            PhotometricOp::Equalize => equalize(img),
            PhotometricOp::Posterize => posterize(img, magnitude.round().clamp(1.0, 8.0) as u32),
            PhotometricOp::Solarize => img.mapv(|v| if v > magnitude { 1.0 - v } else { v }),
            PhotometricOp::Color => blend(&grayscale_like(img), img, magnitude),
            PhotometricOp::Contrast => {
                let mean = luminance(img).mean().unwrap_or(0.0);
                blend(&Image::from_elem(img.dim(), mean), img, magnitude)
            }
            PhotometricOp::Brightness => img.mapv(|v| v * magnitude),
            PhotometricOp::Sharpness => blend(&smooth(img), img, magnitude),
        };
        out.mapv(|v| v.clamp(0.0, 1.0))
    }
}

impl fmt::Display for PhotometricOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Apply a photometric op by name.
pub fn apply_photometric_op(image: &Image, op_name: &str, magnitude: f64) -> Result<Image> {
    let op = PhotometricOp::from_name(op_name)?;
    Ok(op.apply(image, magnitude))
}

fn luminance(img: &Image) -> Array2<f64> {
    let (h, w, _) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
    })
}

fn grayscale_like(img: &Image) -> Image {
    let lum = luminance(img);
    Image::from_shape_fn(img.dim(), |(y, x, _)| lum[[y, x]])
}

/// `degenerate + factor * (img - degenerate)`
fn blend(degenerate: &Image, img: &Image, factor: f64) -> Image {
    let mut out = degenerate.clone();
    Zip::from(&mut out).and(img).for_each(|o, &v| *o += factor * (v - *o));
    out
}

fn autocontrast(img: &Image) -> Image {
    let mut out = img.clone();
    for mut plane in out.axis_iter_mut(Axis(2)) {
        let lo = plane.fold(f64::INFINITY, |m, &v| m.min(v));
        let hi = plane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if hi > lo {
            plane.mapv_inplace(|v| (v - lo) / (hi - lo));
        }
    }
    out
}

fn to_level(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Per-channel histogram equalization on 256 levels.
fn equalize(img: &Image) -> Image {
    let mut out = img.clone();
    for mut plane in out.axis_iter_mut(Axis(2)) {
        let mut hist = [0usize; 256];
        plane.iter().for_each(|&v| hist[to_level(v)] += 1);
        let last = hist.iter().rposition(|&c| c > 0).map(|i| hist[i]).unwrap_or(0);
        let step = (plane.len() - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0.0f64; 256];
        let mut n = step / 2;
        for (i, &c) in hist.iter().enumerate() {
            lut[i] = (n / step).min(255) as f64 / 255.0;
            n += c;
        }
        plane.mapv_inplace(|v| lut[to_level(v)]);
    }
    out
}

fn posterize(img: &Image, bits: u32) -> Image {
    let mask = !((1u32 << (8 - bits)) - 1) & 0xff;
    img.mapv(|v| (to_level(v) as u32 & mask) as f64 / 255.0)
}

/// 3x3 smoothing used by the sharpness op; border pixels are left untouched.
fn smooth(img: &Image) -> Image {
    const K: [[f64; 3]; 3] = [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]];
    let (h, w, ch) = img.dim();
    let mut out = img.clone();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for c in 0..ch {
                let mut acc = 0.0;
                for (ky, row) in K.iter().enumerate() {
                    for (kx, k) in row.iter().enumerate() {
                        acc += k * img[[y + ky - 1, x + kx - 1, c]];
                    }
                }
                out[[y, x, c]] = acc / 13.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmixConfig {
    pub width: usize,
    pub max_depth: usize,
    pub severity: u32,
    pub dirichlet_alpha: f64,
    pub beta_alpha: f64,
    /// Pin the clean-image mixing weight instead of sampling it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_mix: Option<f64>,
}

impl Default for AugmixConfig {
    fn default() -> Self {
        AugmixConfig {
            width: 3,
            max_depth: 3,
            severity: 3,
            dirichlet_alpha: 1.0,
            beta_alpha: 1.0,
            fixed_mix: None,
        }
    }
}

impl AugmixConfig {
    pub fn allowed_ops(&self) -> &'static [PhotometricOp] {
        &ALLOWED_OPS
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::Config(format!("augmix.{f}: {m}")));
        if self.width < 1 {
            return err("width", "must be at least 1");
        }
        if self.max_depth < 1 {
            return err("max_depth", "must be at least 1");
        }
        if !(1..=10).contains(&self.severity) {
            return err("severity", "must lie in 1..=10");
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return err("dirichlet_alpha", "must be positive");
        }
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return err("beta_alpha", "must be positive");
        }
        if let Some(m) = self.fixed_mix {
            if !(0.0..=1.0).contains(&m) {
                return err("fixed_mix", "must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpStep {
    pub op: PhotometricOp,
    pub magnitude: f64,
}

/// One fully-sampled AugMix draw: the chains, their Dirichlet weights and the
/// clean-image weight `mix`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmixPlan {
    pub chains: Vec<Vec<OpStep>>,
    pub weights: Vec<f64>,
    pub mix: f64,
}

impl AugmixPlan {
    pub fn sample(cfg: &AugmixConfig, rng: &mut Rng) -> Self {
        let weights = if cfg.width == 1 {
            vec![1.0]
        } else {
            Dirichlet::new_with_size(cfg.dirichlet_alpha, cfg.width)
                .expect("validated dirichlet parameters")
                .sample(rng)
        };
        let sampled_mix = Beta::new(cfg.beta_alpha, cfg.beta_alpha)
            .expect("validated beta parameters")
            .sample(rng);
        let mix = cfg.fixed_mix.unwrap_or(sampled_mix);
        let chains = (0..cfg.width)
            .map(|_| {
                let depth = rng.gen_range(1..=cfg.max_depth);
                (0..depth)
                    .map(|_| {
                        let op = *ALLOWED_OPS.choose(rng).expect("op list is non-empty");
                        OpStep { op, magnitude: op.sample_magnitude(cfg.severity, rng) }
                    })
                    .collect()
            })
            .collect();
        AugmixPlan { chains, weights, mix }
    }

    /// `mix * image + (1 - mix) * sum_k weights[k] * chain_k(image)`
    pub fn apply(&self, image: &Image) -> Image {
        let mut mixed = Image::zeros(image.dim());
        for (chain, &w) in self.chains.iter().zip(&self.weights) {
            let aug = chain.iter().fold(image.clone(), |img, step| step.op.apply(&img, step.magnitude));
            mixed.scaled_add(w, &aug);
        }
        let mut out = image.mapv(|v| v * self.mix);
        out.scaled_add(1.0 - self.mix, &mixed);
        out.mapv_inplace(|v| v.clamp(0.0, 1.0));
        out
    }
}

pub fn augmix(image: &Image, cfg: &AugmixConfig, rng: &mut Rng) -> Image {
    AugmixPlan::sample(cfg, rng).apply(image)
}

fn fft2(plane: &mut Array2<Complex64>, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (h, w) = plane.dim();
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut buf = vec![Complex64::new(0.0, 0.0); w.max(h)];
    for mut row in plane.rows_mut() {
        row.iter().zip(buf.iter_mut()).for_each(|(v, b)| *b = *v);
        row_fft.process(&mut buf[..w]);
        row.iter_mut().zip(buf.iter()).for_each(|(v, b)| *v = *b);
    }
    for mut col in plane.columns_mut() {
        col.iter().zip(buf.iter_mut()).for_each(|(v, b)| *b = *v);
        col_fft.process(&mut buf[..h]);
        col.iter_mut().zip(buf.iter()).for_each(|(v, b)| *v = *b);
    }
}

/// Blend per-channel Fourier amplitudes with a donor while keeping the phase
/// of `image`: `|F| = (1 - lambda) |F(image)| + lambda |F(donor)|`.
pub fn fourier_amplitude_blend(image: &Image, donor: &Image, lambda_blend: f64) -> Result<Image> {
    if image.dim() != donor.dim() {
        return Err(Error::Dimension(format!(
            "image shape {:?} differs from donor shape {:?}",
            image.dim(),
            donor.dim()
        )));
    }
    if !(0.0..=1.0).contains(&lambda_blend) {
        return Err(Error::Argument(format!("lambda_blend = {lambda_blend} outside [0, 1]")));
    }
    let (h, w, ch) = image.dim();
    let mut planner = FftPlanner::new();
    let mut out = Image::zeros((h, w, ch));
    let scale = 1.0 / (h * w) as f64;
    for c in 0..ch {
        let to_complex = |img: &Image| {
            Array2::from_shape_fn((h, w), |(y, x)| Complex64::new(img[[y, x, c]], 0.0))
        };
        let mut spec = to_complex(image);
        let mut donor_spec = to_complex(donor);
        fft2(&mut spec, &mut planner, false);
        fft2(&mut donor_spec, &mut planner, false);
        Zip::from(&mut spec).and(&donor_spec).for_each(|s, d| {
            let amp = (1.0 - lambda_blend) * s.norm() + lambda_blend * d.norm();
            *s = Complex64::from_polar(amp, s.arg());
        });
        fft2(&mut spec, &mut planner, true);
        for y in 0..h {
            for x in 0..w {
                out[[y, x, c]] = (spec[[y, x]].re * scale).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FtBlendConfig {
    /// Blend weights are drawn uniformly from `[0, lambda_max]`.
    pub lambda_max: f64,
}

impl Default for FtBlendConfig {
    fn default() -> Self {
        FtBlendConfig { lambda_max: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Augmix,
    FtBlend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    pub kind: InterventionKind,
    pub augmix: AugmixConfig,
    pub ft_blend: FtBlendConfig,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            kind: InterventionKind::Augmix,
            augmix: AugmixConfig::default(),
            ft_blend: FtBlendConfig::default(),
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<()> {
        self.augmix.validate()?;
        if !(0.0..=1.0).contains(&self.ft_blend.lambda_max) {
            return Err(Error::Config("ft_blend.lambda_max: must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Identity intervention: AugMix with the clean image weight pinned to 1.
    pub fn identity() -> Self {
        InterventionConfig {
            augmix: AugmixConfig { fixed_mix: Some(1.0), ..AugmixConfig::default() },
            ..InterventionConfig::default()
        }
    }
}

/// Applies the configured intervention to samples drawn from `pool`. FT-Aug
/// donors come from the same domain as the sample being intervened on.
pub struct Intervener<'a> {
    cfg: &'a InterventionConfig,
    pool: &'a Dataset,
    by_domain: HashMap<&'a str, Vec<usize>>,
}

impl<'a> Intervener<'a> {
    pub fn new(cfg: &'a InterventionConfig, pool: &'a Dataset) -> Self {
        let mut by_domain: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in pool.samples.iter().enumerate() {
            by_domain.entry(s.domain.as_str()).or_default().push(i);
        }
        Intervener { cfg, pool, by_domain }
    }

    /// Intervened copy of `sample`; label, domain, index and nuisance record
    /// are carried over unchanged.
    pub fn apply_sample(&self, sample: &ImageSample, rng: &mut Rng) -> Result<ImageSample> {
        Ok(ImageSample {
            image: self.apply(sample, rng)?,
            label: sample.label,
            domain: sample.domain.clone(),
            index: sample.index,
            nuisance: sample.nuisance,
        })
    }

    pub fn apply(&self, sample: &ImageSample, rng: &mut Rng) -> Result<Image> {
        match self.cfg.kind {
            InterventionKind::Augmix => Ok(augmix(&sample.image, &self.cfg.augmix, rng)),
            InterventionKind::FtBlend => {
                let candidates = self.by_domain.get(sample.domain.as_str());
                let donor = match candidates {
                    Some(idx) if !idx.is_empty() => &self.pool.samples[*idx.choose(rng).unwrap()].image,
                    _ => &sample.image,
                };
                let lambda = rng.gen_range(0.0..=self.cfg.ft_blend.lambda_max);
                fourier_amplitude_blend(&sample.image, donor, lambda)
            }
        }
    }
}
