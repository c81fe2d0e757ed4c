//! Experiment configuration documents.
//!
//! Every field has a documented default, unknown fields are rejected, and the
//! resolved document is copied into each run's output directory.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{DomainSpec, NuisanceRanges, GAZE_LIMIT, MIN_IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::intervene::InterventionConfig;
use crate::losses::LossWeights;
use crate::nets::NetConfig;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Cauge,
    Baseline,
}

/// Component switches: confusion loss with its classifier (`intr`),
/// factorization loss (`fact`), attention gate (`attn`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub intr: bool,
    pub fact: bool,
    pub attn: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags::ALL_ON
    }
}

impl AblationFlags {
    pub const ALL_ON: AblationFlags = AblationFlags { intr: true, fact: true, attn: true };
    pub const ALL_OFF: AblationFlags = AblationFlags { intr: false, fact: false, attn: false };

    /// The eight combinations: all off, singles, pairs, all on.
    pub fn all_combinations() -> [AblationFlags; 8] {
        let f = |intr, fact, attn| AblationFlags { intr, fact, attn };
        [
            f(false, false, false),
            f(true, false, false),
            f(false, true, false),
            f(false, false, true),
            f(true, true, false),
            f(true, false, true),
            f(false, true, true),
            f(true, true, true),
        ]
    }

    pub fn any(&self) -> bool {
        self.intr || self.fact || self.attn
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.intr, "intr"), (self.fact, "fact"), (self.attn, "attn")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

/// What a training run actually optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// L1 regression on clean images only; no intervention, gate or classifier.
    Baseline,
    /// Intervened stream present; flags select the extra components.
    Cauge(AblationFlags),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub flags: AblationFlags,
    pub intervention: InterventionConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    /// Classifier updates per batch before each F/AL/G update.
    pub classifier_steps: usize,
    /// Write an intermediate checkpoint every k epochs (0 = only at the end).
    pub checkpoint_every: usize,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Cauge,
            flags: AblationFlags::ALL_ON,
            intervention: InterventionConfig::default(),
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            classifier_steps: 1,
            checkpoint_every: 0,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        match self.mode {
            TrainMode::Baseline => Variant::Baseline,
            TrainMode::Cauge if !self.flags.any() => Variant::Baseline,
            TrainMode::Cauge => Variant::Cauge(self.flags),
        }
    }

    /// Whether the model's attention gate participates in the forward pass.
    pub fn uses_attention(&self) -> bool {
        matches!(self.variant(), Variant::Cauge(f) if f.attn)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::Config(format!("train.{f}: {m}")));
        if self.epochs == 0 {
            return err("epochs", "must be at least 1");
        }
        if self.batch_size < 2 {
            return err("batch_size", "must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return err("adam_beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return err("adam_beta2", "must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return err("adam_eps", "must be positive");
        }
        if self.classifier_steps == 0 {
            return err("classifier_steps", "must be at least 1");
        }
        self.loss_weights.validate().map_err(|e| prefix(e, "train."))?;
        self.intervention.validate().map_err(|e| prefix(e, "train.intervention."))?;
        self.net.validate().map_err(|e| prefix(e, "train."))
    }
}

fn prefix(e: Error, p: &str) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{p}{m}")),
        other => other,
    }
}

/// A named source-to-target evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferTask {
    pub source: String,
    pub target: String,
}

impl TransferTask {
    pub fn name(&self) -> String {
        format!("{}->{}", self.source, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub image_size: usize,
    pub n_train_per_domain: usize,
    pub n_test_per_domain: usize,
    /// Gaze labels are drawn uniformly from `[-gaze_limit, gaze_limit]^2`.
    pub gaze_limit: f64,
    pub train_gaze_seed: u64,
    pub test_gaze_seed: u64,
    pub source_domains: Vec<DomainSpec>,
    pub target_domains: Vec<DomainSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let (source_domains, target_domains) = desk_domains();
        DataConfig {
            image_size: 32,
            n_train_per_domain: 512,
            n_test_per_domain: 256,
            gaze_limit: 0.5,
            train_gaze_seed: 1,
            test_gaze_seed: 2,
            source_domains,
            target_domains,
        }
    }
}

fn domain(name: &str, seed: u64, illum: [f64; 2], tint: [[f64; 2]; 3], blur: [f64; 2], noise: [f64; 2], bg: [f64; 2]) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        nuisance_ranges: NuisanceRanges {
            illumination: illum.into(),
            tint: [tint[0].into(), tint[1].into(), tint[2].into()],
            blur_sigma: blur.into(),
            noise_sigma: noise.into(),
            background_level: bg.into(),
        },
        seed,
    }
}

/// Two wide-nuisance source recipes and two narrow, shifted target recipes.
pub fn desk_domains() -> (Vec<DomainSpec>, Vec<DomainSpec>) {
    let sources = vec![
        domain("src-e", 101, [0.8, 1.2], [[-0.05, 0.05]; 3], [0.0, 0.6], [0.0, 0.02], [0.4, 0.6]),
        domain("src-g", 102, [0.7, 1.1], [[-0.06, 0.02], [-0.03, 0.03], [-0.02, 0.06]], [0.2, 0.8], [0.0, 0.02], [0.3, 0.5]),
    ];
    let targets = vec![
        domain("tgt-m", 201, [0.5, 0.65], [[0.06, 0.1], [0.0, 0.03], [-0.08, -0.05]], [0.6, 0.9], [0.02, 0.04], [0.15, 0.25]),
        domain("tgt-d", 202, [1.3, 1.45], [[-0.08, -0.05], [-0.02, 0.02], [0.05, 0.08]], [0.0, 0.3], [0.03, 0.05], [0.7, 0.8]),
    ];
    (sources, targets)
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::Config(format!("data.{f}: {m}")));
        if self.image_size < MIN_IMAGE_SIZE {
            return err("image_size", format!("must be at least {MIN_IMAGE_SIZE}"));
        }
        if self.n_train_per_domain == 0 {
            return err("n_train_per_domain", "must be at least 1".into());
        }
        if self.n_test_per_domain == 0 {
            return err("n_test_per_domain", "must be at least 1".into());
        }
        if !(self.gaze_limit > 0.0 && self.gaze_limit <= GAZE_LIMIT) {
            return err("gaze_limit", "must lie in (0, pi/3]".into());
        }
        let mut names = HashSet::new();
        for d in self.source_domains.iter().chain(&self.target_domains) {
            if !names.insert(d.name.as_str()) {
                return err("domains", format!("duplicate domain name '{}'", d.name));
            }
            d.nuisance_ranges.validate(&d.name).map_err(|e| prefix(e, "data."))?;
        }
        if self.source_domains.is_empty() {
            return err("source_domains", "at least one source domain required".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Clean/intervened pairs drawn per invariance measurement.
    pub invariance_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { invariance_pairs: 256 }
    }
}

/// One self-contained experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub tasks: Vec<TransferTask>,
    pub seeds: Vec<u64>,
    pub eval: EvalConfig,
    /// Output directory; relative paths resolve against the output root.
    pub output_dir: Option<String>,
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale grid: 32x32 images, four conv blocks 8-16-32-32 (N = 32),
    /// 1024 training samples per source domain, 30 epochs.
    pub fn desk() -> Self {
        let data = DataConfig { n_train_per_domain: 1024, ..DataConfig::default() };
        let tasks = ["src-e", "src-g"]
            .iter()
            .flat_map(|s| {
                ["tgt-m", "tgt-d"].iter().map(move |t| TransferTask { source: s.to_string(), target: t.to_string() })
            })
            .collect();
        let net = NetConfig {
            image_size: data.image_size,
            channels: vec![8, 16, 32, 32],
            norm_groups: 4,
            reduction: 8,
            gaze_hidden: 32,
            classifier_hidden: 32,
            input_mean: [0.5; 3],
            input_std: [0.5; 3],
        };
        ExperimentConfig {
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                // the full-scale factorization weight swamps the gaze term at this batch size
                loss_weights: LossWeights { fac: 0.01, ..LossWeights::default() },
                net,
                ..TrainConfig::default()
            },
            data,
            tasks,
            seeds: vec![0, 1, 2],
            eval: EvalConfig::default(),
            output_dir: None,
        }
    }

    /// Parse a config, filling every field the text leaves out (at any
    /// nesting depth) from [`ExperimentConfig::desk`]. Arrays are replaced
    /// whole.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        let mut merged = serde_json::to_value(Self::desk()).expect("config serializes");
        merge(&mut merged, user);
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(format!("schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        if self.train.net.image_size != self.data.image_size {
            return Err(Error::Config(format!(
                "train.net.image_size: {} does not match data.image_size {}",
                self.train.net.image_size, self.data.image_size
            )));
        }
        let sources: HashSet<&str> = self.data.source_domains.iter().map(|d| d.name.as_str()).collect();
        let targets: HashSet<&str> = self.data.target_domains.iter().map(|d| d.name.as_str()).collect();
        for (i, t) in self.tasks.iter().enumerate() {
            if !sources.contains(t.source.as_str()) {
                return Err(Error::Config(format!("tasks[{i}].source: '{}' is not a source domain", t.source)));
            }
            if !targets.contains(t.target.as_str()) {
                return Err(Error::Config(format!("tasks[{i}].target: '{}' is not a target domain", t.target)));
            }
            if t.source == t.target {
                return Err(Error::Config(format!("tasks[{i}]: source and target must differ")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed required".into()));
        }
        if self.eval.invariance_pairs == 0 {
            return Err(Error::Config("eval.invariance_pairs: must be at least 1".into()));
        }
        Ok(())
    }

    /// Source domains in the order they first appear in the task list.
    pub fn task_sources(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.tasks.iter().filter(|t| seen.insert(t.source.clone())).map(|t| t.source.clone()).collect()
    }
}
