//! Procedural eye-image generator.
//!
//! Each image is a pair of sclera ellipses with an iris disk and pupil whose
//! displacement is a deterministic function of the gaze label (the causal
//! factor). Illumination, tint, blur, noise and background level are applied
//! afterwards and never touch the geometry, so two renders with the same gaze
//! share iris centers exactly regardless of the nuisance draw.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, tag};

/// An RGB image stored as `(height, width, channel)` with values in `[0, 1]`.
pub type Image = Array3<f64>;

/// Largest absolute pitch or yaw a label may carry, in radians.
pub const GAZE_LIMIT: f64 = PI / 3.0;

/// Smallest renderable image side.
pub const MIN_IMAGE_SIZE: usize = 32;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Gaze direction as (pitch, yaw) in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeLabel {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeLabel {
    pub fn new(pitch: f64, yaw: f64) -> Result<Self> {
        let g = GazeLabel { pitch, yaw };
        g.validate()?;
        Ok(g)
    }

    pub fn zero() -> Self {
        GazeLabel { pitch: 0.0, yaw: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("pitch", self.pitch), ("yaw", self.yaw)] {
            if !v.is_finite() || v.abs() > GAZE_LIMIT + 1e-12 {
                return Err(Error::Range(format!(
                    "{name} = {v} outside [-pi/3, pi/3]"
                )));
            }
        }
        Ok(())
    }
}

/// Non-causal rendering factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceParams {
    pub illumination: f64,
    pub tint: [f64; 3],
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub background_level: f64,
}

impl NuisanceParams {
    /// Unit illumination, no tint, blur or noise, mid-gray background.
    pub fn neutral() -> Self {
        NuisanceParams {
            illumination: 1.0,
            tint: [0.0; 3],
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            background_level: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if !v.is_finite() || v < lo || v > hi {
                Err(Error::Range(format!("{name} = {v} outside [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        check("illumination", self.illumination, 0.3, 1.7)?;
        for (c, &t) in self.tint.iter().enumerate() {
            check(&format!("tint[{c}]"), t, -0.25, 0.25)?;
        }
        check("blur_sigma", self.blur_sigma, 0.0, 2.0)?;
        check("noise_sigma", self.noise_sigma, 0.0, 0.08)?;
        check("background_level", self.background_level, 0.0, 1.0)
    }
}

/// Closed sampling interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn within(&self, lo: f64, hi: f64) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && lo <= self.lo && self.lo <= self.hi && self.hi <= hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceRanges {
    pub illumination: Interval,
    pub tint: [Interval; 3],
    pub blur_sigma: Interval,
    pub noise_sigma: Interval,
    pub background_level: Interval,
}

impl NuisanceRanges {
    pub fn neutral() -> Self {
        NuisanceRanges {
            illumination: Interval::point(1.0),
            tint: [Interval::point(0.0); 3],
            blur_sigma: Interval::point(0.0),
            noise_sigma: Interval::point(0.0),
            background_level: Interval::point(0.5),
        }
    }

    pub fn validate(&self, domain: &str) -> Result<()> {
        let ok = self.illumination.within(0.3, 1.7)
            && self.tint.iter().all(|t| t.within(-0.25, 0.25))
            && self.blur_sigma.within(0.0, 2.0)
            && self.noise_sigma.within(0.0, 0.08)
            && self.background_level.within(0.0, 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "domains[{domain}].nuisance_ranges: interval empty or outside the nuisance bounds"
            )))
        }
    }
}

/// A named nuisance distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub nuisance_ranges: NuisanceRanges,
    pub seed: u64,
}

impl DomainSpec {
    /// Nuisance draw for sample `index`; a pure function of `(seed, index)`.
    pub fn sample_nuisance(&self, index: usize) -> NuisanceParams {
        let mut rng = rng_for(self.seed, &[tag("nuisance"), index as u64]);
        let r = &self.nuisance_ranges;
        NuisanceParams {
            illumination: r.illumination.sample(&mut rng),
            tint: [
                r.tint[0].sample(&mut rng),
                r.tint[1].sample(&mut rng),
                r.tint[2].sample(&mut rng),
            ],
            blur_sigma: r.blur_sigma.sample(&mut rng),
            noise_sigma: r.noise_sigma.sample(&mut rng),
            background_level: r.background_level.sample(&mut rng),
        }
    }

    /// Seed for the per-pixel noise of sample `index`.
    pub fn render_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[tag("render"), index as u64])
    }
}

/// Iris displacement in pixels for a gaze direction. `dy` grows downward in
/// image coordinates, so positive pitch (looking up) gives negative `dy`.
pub fn gaze_to_iris_offset(gaze: GazeLabel, eye_radius: f64) -> Result<(f64, f64)> {
    if !(eye_radius > 0.0) || !eye_radius.is_finite() {
        return Err(Error::Range(format!("eye_radius = {eye_radius} must be positive")));
    }
    gaze.validate()?;
    let dx = eye_radius * gaze.yaw.sin() * gaze.pitch.cos();
    let dy = -eye_radius * gaze.pitch.sin();
    Ok((dx, dy))
}

/// Fixed eye geometry for one image size. All lengths in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeLayout {
    pub size: usize,
    pub eye_centers: [(f64, f64); 2],
    pub sclera_axes: (f64, f64),
    pub iris_radius: f64,
    pub pupil_radius: f64,
    /// Radius passed to [`gaze_to_iris_offset`].
    pub gaze_radius: f64,
}

impl EyeLayout {
    pub fn for_size(size: usize) -> Self {
        let s = size as f64;
        EyeLayout {
            size,
            eye_centers: [(0.3 * s, 0.5 * s), (0.7 * s, 0.5 * s)],
            sclera_axes: (0.17 * s, 0.12 * s),
            iris_radius: 0.075 * s,
            pupil_radius: 0.03 * s,
            gaze_radius: 0.1 * s,
        }
    }

    /// Iris-disk centers `(x, y)` for both eyes.
    pub fn iris_centers(&self, gaze: GazeLabel) -> Result<[(f64, f64); 2]> {
        let (dx, dy) = gaze_to_iris_offset(gaze, self.gaze_radius)?;
        let [l, r] = self.eye_centers;
        Ok([(l.0 + dx, l.1 + dy), (r.0 + dx, r.1 + dy)])
    }
}

const SCLERA: [f64; 3] = [0.93, 0.91, 0.88];
const IRIS: [f64; 3] = [0.28, 0.42, 0.62];
const PUPIL: [f64; 3] = [0.04, 0.04, 0.05];
const SUPERSAMPLE: usize = 4;

/// One rendered example with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image: Image,
    pub label: GazeLabel,
    pub domain: String,
    pub index: usize,
    pub nuisance: NuisanceParams,
}

/// Anti-aliased geometry only, on the given background, before any nuisance.
pub fn render_geometry(gaze: GazeLabel, background: f64, size: usize) -> Result<Image> {
    if size < MIN_IMAGE_SIZE {
        return Err(Error::Argument(format!(
            "image size {size} below minimum {MIN_IMAGE_SIZE}"
        )));
    }
    let layout = EyeLayout::for_size(size);
    let irises = layout.iris_centers(gaze)?;
    let (ax, ay) = layout.sclera_axes;
    let mut img = Image::zeros((size, size, 3));
    let n = SUPERSAMPLE as f64;
    let weight = 1.0 / (n * n);
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n;
                    let py = y as f64 + (sy as f64 + 0.5) / n;
                    let mut color = [background; 3];
                    for (eye, iris) in layout.eye_centers.iter().zip(irises.iter()) {
                        let ex = (px - eye.0) / ax;
                        let ey = (py - eye.1) / ay;
                        if ex * ex + ey * ey > 1.0 {
                            continue;
                        }
                        let d2 = (px - iris.0).powi(2) + (py - iris.1).powi(2);
                        color = if d2 <= layout.pupil_radius.powi(2) {
                            PUPIL
                        } else if d2 <= layout.iris_radius.powi(2) {
                            IRIS
                        } else {
                            SCLERA
                        };
                    }
                    for c in 0..3 {
                        acc[c] += color[c] * weight;
                    }
                }
            }
            for c in 0..3 {
                img[[y, x, c]] = acc[c];
            }
        }
    }
    Ok(img)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, ch) = img.dim();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Image::zeros((h, w, ch));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                tmp[[y, x, c]] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * img[[y, clamp(x as isize + i as isize - r, w), c]])
                    .sum();
            }
        }
    }
    let mut out = Image::zeros((h, w, ch));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[[y, x, c]] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp[[clamp(y as isize + i as isize - r, h), x, c]])
                    .sum();
            }
        }
    }
    out
}

/// Apply nuisances in the fixed order illumination, tint, blur, noise. The
/// result is not clipped.
pub fn apply_nuisance(geometry: &Image, nuisance: &NuisanceParams, rng_seed: u64) -> Image {
    let mut img = geometry.mapv(|v| v * nuisance.illumination);
    for (c, mut plane) in img.axis_iter_mut(ndarray::Axis(2)).enumerate() {
        plane += nuisance.tint[c];
    }
    let mut img = gaussian_blur(&img, nuisance.blur_sigma);
    if nuisance.noise_sigma > 0.0 {
        let mut rng = rng_for(rng_seed, &[tag("noise")]);
        let normal = Normal::new(0.0, nuisance.noise_sigma).expect("noise sigma is finite");
        img.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    img
}

/// Render one sample. Deterministic in all arguments.
pub fn render_sample(
    gaze: GazeLabel,
    nuisance: &NuisanceParams,
    size: usize,
    rng_seed: u64,
) -> Result<ImageSample> {
    nuisance.validate()?;
    let geometry = render_geometry(gaze, nuisance.background_level, size)?;
    let image = apply_nuisance(&geometry, nuisance, rng_seed).mapv(|v| v.clamp(0.0, 1.0));
    Ok(ImageSample {
        image,
        label: gaze,
        domain: String::new(),
        index: 0,
        nuisance: *nuisance,
    })
}

/// An in-memory collection of samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Names of the domains present, in first-seen order.
    pub fn domain_names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.domain.as_str()))
            .map(|s| s.domain.clone())
            .collect()
    }

    /// Samples whose domain is in `names`, preserving order.
    pub fn filter_domains(&self, names: &[String]) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| names.contains(&s.domain))
                .cloned()
                .collect(),
        }
    }

    pub fn image_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image.dim().0)
    }
}

/// Uniform gaze labels over `[-limit, limit]^2`, shared by every domain.
pub fn sample_gazes(n: usize, seed: u64, limit: f64) -> Vec<GazeLabel> {
    let mut rng = rng_for(seed, &[tag("gaze")]);
    (0..n)
        .map(|_| GazeLabel {
            pitch: rng.gen_range(-limit..=limit),
            yaw: rng.gen_range(-limit..=limit),
        })
        .collect()
}

/// Render `n_per_domain` samples for every domain with a common gaze sequence.
pub fn generate_dataset(
    domains: &[DomainSpec],
    n_per_domain: usize,
    gaze_sampler_seed: u64,
    size: usize,
) -> Result<Dataset> {
    generate_dataset_with_limit(domains, n_per_domain, gaze_sampler_seed, size, GAZE_LIMIT)
}

pub fn generate_dataset_with_limit(
    domains: &[DomainSpec],
    n_per_domain: usize,
    gaze_sampler_seed: u64,
    size: usize,
    gaze_limit: f64,
) -> Result<Dataset> {
    if n_per_domain == 0 {
        return Err(Error::Config("n_per_domain must be at least 1".into()));
    }
    if !(gaze_limit > 0.0 && gaze_limit <= GAZE_LIMIT) {
        return Err(Error::Config(format!(
            "gaze_limit = {gaze_limit} must lie in (0, pi/3]"
        )));
    }
    let mut names = HashSet::new();
    for d in domains {
        if !names.insert(d.name.as_str()) {
            return Err(Error::Config(format!("duplicate domain name '{}'", d.name)));
        }
        d.nuisance_ranges.validate(&d.name)?;
    }
    let gazes = sample_gazes(n_per_domain, gaze_sampler_seed, gaze_limit);
    let jobs: Vec<(&DomainSpec, usize)> = domains
        .iter()
        .flat_map(|d| (0..n_per_domain).map(move |i| (d, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(d, i)| {
            let mut s = render_sample(gazes[i], &d.sample_nuisance(i), size, d.render_seed(i))?;
            s.domain = d.name.clone();
            s.index = i;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    image: String,
    pitch: f64,
    yaw: f64,
    domain: String,
    index: usize,
    nuisance: NuisanceParams,
}

/// Decimal text with 17 significant digits; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn manifest_line(rel: &str, s: &ImageSample) -> String {
    let n = &s.nuisance;
    let mut line = String::new();
    write!(
        line,
        "{{\"image\":{},\"pitch\":{},\"yaw\":{},\"domain\":{},\"index\":{},\"nuisance\":{{\"illumination\":{},\"tint\":[{},{},{}],\"blur_sigma\":{},\"noise_sigma\":{},\"background_level\":{}}}}}",
        serde_json::to_string(rel).expect("string serializes"),
        fmt_f64(s.label.pitch),
        fmt_f64(s.label.yaw),
        serde_json::to_string(&s.domain).expect("string serializes"),
        s.index,
        fmt_f64(n.illumination),
        fmt_f64(n.tint[0]),
        fmt_f64(n.tint[1]),
        fmt_f64(n.tint[2]),
        fmt_f64(n.blur_sigma),
        fmt_f64(n.noise_sigma),
        fmt_f64(n.background_level),
    )
    .expect("writing to a String cannot fail");
    line
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let (h, w, _) = img.dim();
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = img.iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::Load(format!("corrupt image file {}", path.display()));
    // header: magic, width, height, maxval separated by single whitespace runs
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..pos + w * h * 3).ok_or_else(bad)?;
    let img = Image::from_shape_vec((h, w, 3), data.iter().map(|&b| b as f64 / 255.0).collect())
        .map_err(|_| bad())?;
    Ok(img)
}

/// Write images as 8-bit PPM files plus `manifest.jsonl`. Returns the
/// manifest path.
pub fn write_dataset(dataset: &Dataset, directory: &Path) -> Result<PathBuf> {
    let images = directory.join("images");
    fs::create_dir_all(&images)?;
    let manifest_path = directory.join(MANIFEST_FILE);
    let mut manifest = BufWriter::new(fs::File::create(&manifest_path)?);
    for s in &dataset.samples {
        let rel = format!("images/{}_{:06}.ppm", sanitize(&s.domain), s.index);
        write_ppm(&directory.join(&rel), &s.image)?;
        writeln!(manifest, "{}", manifest_line(&rel, s))?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn read_dataset(directory: &Path) -> Result<Dataset> {
    let manifest_path = directory.join(MANIFEST_FILE);
    let file = fs::File::open(&manifest_path).map_err(|e| {
        Error::Load(format!("cannot open manifest {}: {e}", manifest_path.display()))
    })?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Load(format!("{} line {}: {e}", manifest_path.display(), lineno + 1))
        })?;
        let img_path = directory.join(&rec.image);
        if !img_path.is_file() {
            return Err(Error::Load(format!(
                "{} line {}: missing image file {}",
                manifest_path.display(),
                lineno + 1,
                rec.image
            )));
        }
        let image = read_ppm(&img_path).map_err(|e| match e {
            Error::Load(msg) => Error::Load(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?;
        samples.push(ImageSample {
            image,
            label: GazeLabel { pitch: rec.pitch, yaw: rec.yaw },
            domain: rec.domain,
            index: rec.index,
            nuisance: rec.nuisance,
        });
    }
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn domain(name: &str, seed: u64) -> DomainSpec {
        DomainSpec {
            name: name.into(),
            nuisance_ranges: NuisanceRanges {
                illumination: Interval::new(0.5, 1.5),
                tint: [Interval::new(-0.1, 0.1); 3],
                blur_sigma: Interval::new(0.0, 1.0),
                noise_sigma: Interval::new(0.0, 0.05),
                background_level: Interval::new(0.2, 0.8),
            },
            seed,
        }
    }

    #[test]
    fn iris_offset_examples() {
        let (dx, dy) = gaze_to_iris_offset(GazeLabel::zero(), 10.0).unwrap();
        assert_eq!((dx, dy), (0.0, 0.0));
        let (dx, dy) = gaze_to_iris_offset(GazeLabel { pitch: 0.0, yaw: PI / 6.0 }, 10.0).unwrap();
        assert_abs_diff_eq!(dx, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dy, 0.0, epsilon = 1e-12);
        let (dx, dy) = gaze_to_iris_offset(GazeLabel { pitch: PI / 6.0, yaw: 0.0 }, 10.0).unwrap();
        assert_abs_diff_eq!(dx, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dy, -5.0, epsilon = 1e-12);
    }

    #[test]
    fn iris_offset_rejects_bad_input() {
        let g = GazeLabel { pitch: 1.2, yaw: 0.0 };
        assert!(matches!(gaze_to_iris_offset(g, 10.0), Err(Error::Range(_))));
        assert!(matches!(gaze_to_iris_offset(GazeLabel::zero(), 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn render_is_deterministic() {
        let g = GazeLabel { pitch: 0.2, yaw: -0.4 };
        let n = domain("a", 1).sample_nuisance(3);
        let a = render_sample(g, &n, 32, 99).unwrap();
        let b = render_sample(g, &n, 32, 99).unwrap();
        assert_eq!(a.image, b.image);
        assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn pupil_location_does_not_depend_on_nuisance() {
        // darkest pixel of the left half tracks the pupil; compare two clean
        // renders that differ only by illumination and background
        let g = GazeLabel { pitch: -0.3, yaw: 0.5 };
        let mut u1 = NuisanceParams::neutral();
        let mut u2 = NuisanceParams::neutral();
        u1.illumination = 0.6;
        u2.illumination = 1.4;
        u2.background_level = 0.9;
        u2.tint = [0.1, -0.05, 0.0];
        let argmin = |img: &Image| {
            let mut best = (f64::INFINITY, 0, 0);
            for y in 0..img.dim().0 {
                for x in 0..img.dim().1 / 2 {
                    let v = img[[y, x, 0]] + img[[y, x, 1]] + img[[y, x, 2]];
                    if v < best.0 {
                        best = (v, y, x);
                    }
                }
            }
            (best.1, best.2)
        };
        let a = render_sample(g, &u1, 48, 1).unwrap();
        let b = render_sample(g, &u2, 48, 2).unwrap();
        assert_eq!(argmin(&a.image), argmin(&b.image));
        let layout = EyeLayout::for_size(48);
        let centers = layout.iris_centers(g).unwrap();
        let (py, px) = argmin(&a.image);
        assert!((px as f64 + 0.5 - centers[0].0).abs() < 1.5);
        assert!((py as f64 + 0.5 - centers[0].1).abs() < 1.5);
    }

    #[test]
    fn halving_illumination_halves_mean() {
        let g = GazeLabel { pitch: 0.1, yaw: 0.2 };
        let full = NuisanceParams::neutral();
        let half = NuisanceParams { illumination: 0.5, ..full };
        let a = render_sample(g, &full, 32, 0).unwrap();
        let b = render_sample(g, &half, 32, 0).unwrap();
        let (ma, mb) = (a.image.mean().unwrap(), b.image.mean().unwrap());
        assert_abs_diff_eq!(mb, 0.5 * ma, epsilon = 1e-12);
    }

    #[test]
    fn render_rejects_small_size() {
        let r = render_sample(GazeLabel::zero(), &NuisanceParams::neutral(), 16, 0);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn one_domain_five_samples() {
        let ds = generate_dataset(&[domain("only", 3)], 5, 11, 32).unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.samples.iter().all(|s| s.domain == "only"));
    }

    #[test]
    fn domains_share_gaze_sequence() {
        let doms = [domain("a", 1), domain("b", 2), domain("c", 3)];
        let ds = generate_dataset(&doms, 100, 5, 32).unwrap();
        let labels = |name: &str| -> Vec<GazeLabel> {
            ds.samples.iter().filter(|s| s.domain == name).map(|s| s.label).collect()
        };
        assert_eq!(labels("a"), labels("b"));
        assert_eq!(labels("a"), labels("c"));
        assert_eq!(labels("a").len(), 100);
    }

    #[test]
    fn duplicate_domain_names_rejected() {
        let r = generate_dataset(&[domain("a", 1), domain("a", 2)], 1, 0, 32);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = generate_dataset(&[domain("a", 1)], 0, 0, 32);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn gaze_sampler_covers_range() {
        let g = sample_gazes(1000, 17, GAZE_LIMIT);
        let span = |f: fn(&GazeLabel) -> f64| {
            let lo = g.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = g.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo) / (2.0 * GAZE_LIMIT)
        };
        assert!(span(|g| g.pitch) >= 0.9);
        assert!(span(|g| g.yaw) >= 0.9);
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&[domain("x y", 4)], 10, 2, 32).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.nuisance, b.nuisance);
            assert_eq!((a.domain.as_str(), a.index), (b.domain.as_str(), b.index));
            let max_diff = (&a.image - &b.image).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_diff <= 1.0 / 255.0);
        }
    }

    #[test]
    fn manifest_is_byte_identical_across_regeneration() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for d in [&d1, &d2] {
            let ds = generate_dataset(&[domain("a", 4), domain("b", 5)], 6, 2, 32).unwrap();
            write_dataset(&ds, d.path()).unwrap();
        }
        let m1 = fs::read(d1.path().join(MANIFEST_FILE)).unwrap();
        let m2 = fs::read(d2.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn missing_image_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&[domain("a", 4)], 3, 2, 32).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/a_000001.ppm")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
        assert!(err.to_string().contains("a_000001.ppm"), "{err}");
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(&Dataset::default(), dir.path()).unwrap();
        assert_eq!(fs::read_to_string(path).unwrap(), "");
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn corrupt_manifest_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{\"image\": 3}\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
