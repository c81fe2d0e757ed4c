//! Adversarial training loop.
//!
//! Each batch runs two phases. Phase A updates the intervention classifier
//! on detached features; Phase B updates the feature extractor, attention
//! gate and gaze predictor on the weighted primary objective, with the
//! confusion gradient flowing through the (fixed) classifier.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointRecord};
use crate::config::{TrainConfig, Variant};
use crate::datagen::{Dataset, Image, ImageSample};
use crate::error::{Error, Result};
use crate::intervene::Intervener;
use crate::nets::{to_batch, CaugeModel, NetId};
use crate::losses::loss_cls_with_grad;
use crate::objective::{classifier_accuracy, evaluate, Batch, ObjectiveOptions, TermWeights};
use crate::optim::Adam;
use crate::rng::{rng_for, tag};

pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    /// Global step index, counted from the start of the run.
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_cls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_con: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_fac: Option<f64>,
    pub l_gaze: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_prim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier_accuracy: Option<f64>,
}

/// Means of the step metrics over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_cls: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_con: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_fac: Option<f64>,
    pub l_gaze: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_prim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier_accuracy: Option<f64>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRow {
    /// Written once when a run (or a resumed segment) starts.
    Run { version: String, start_epoch: usize, config: Box<TrainConfig> },
    Step(StepMetrics),
    Epoch(EpochSummary),
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.collect::<Option<Vec<_>>>()?;
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

impl EpochSummary {
    fn from_steps(epoch: usize, steps: &[StepMetrics]) -> Self {
        EpochSummary {
            epoch,
            steps: steps.len(),
            l_cls: mean_opt(steps.iter().map(|s| s.l_cls)),
            l_con: mean_opt(steps.iter().map(|s| s.l_con)),
            l_fac: mean_opt(steps.iter().map(|s| s.l_fac)),
            l_gaze: mean_opt(steps.iter().map(|s| Some(s.l_gaze))).unwrap_or(0.0),
            l_prim: mean_opt(steps.iter().map(|s| s.l_prim)),
            classifier_accuracy: mean_opt(steps.iter().map(|s| s.classifier_accuracy)),
        }
    }
}

/// Model plus the two optimizers, whose network sets are disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: CaugeModel,
    pub opt_c: Adam,
    pub opt_main: Adam,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let model = CaugeModel::new(&cfg.net, cfg.uses_attention(), cfg.seed)?;
        let opt_c = Adam::new(cfg.adam(), &model, &[NetId::C]);
        let opt_main = Adam::new(cfg.adam(), &model, &[NetId::F, NetId::AL, NetId::G]);
        Adam::assert_disjoint(&opt_c, &opt_main)?;
        Ok(TrainState { model, opt_c, opt_main })
    }
}

/// Clean images, labels and (for intervened variants) the intervened copies
/// of one batch, already normalized.
pub struct PreparedBatch {
    pub xs: ndarray::Array4<f64>,
    pub xa: Option<ndarray::Array4<f64>>,
    pub y: Array2<f64>,
}

/// Build a batch. `sample_keys` seed each sample's intervention so the
/// result does not depend on batch composition.
pub fn prepare_batch(
    cfg: &TrainConfig,
    samples: &[&ImageSample],
    sample_keys: &[u64],
    intervener: &Intervener<'_>,
    epoch: usize,
) -> Result<PreparedBatch> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let xs = to_batch(&images, &cfg.net)?;
    let y = Array2::from_shape_fn((samples.len(), 2), |(i, j)| {
        if j == 0 {
            samples[i].label.pitch
        } else {
            samples[i].label.yaw
        }
    });
    let xa = match cfg.variant() {
        Variant::Baseline => None,
        Variant::Cauge(_) => {
            let aug = samples
                .iter()
                .zip(sample_keys)
                .map(|(s, &k)| intervener.apply_sample(s, &mut rng_for(cfg.seed, &[tag("intervene"), epoch as u64, k])))
                .collect::<Result<Vec<ImageSample>>>()?;
            if let Some((_, s)) = aug.iter().zip(samples).find(|(a, s)| a.label != s.label) {
                return Err(Error::State(format!("intervention changed the label of sample {}", s.index)));
            }
            let refs: Vec<&Image> = aug.iter().map(|a| &a.image).collect();
            Some(to_batch(&refs, &cfg.net)?)
        }
    };
    Ok(PreparedBatch { xs, xa, y })
}

/// One classifier update on fixed (detached) features. Returns the loss and
/// accuracy measured before the update.
pub fn classifier_step(
    model: &mut CaugeModel,
    opt_c: &mut Adam,
    zs: &ArrayView2<f64>,
    za: &ArrayView2<f64>,
) -> Result<(f64, f64)> {
    let z = concatenate![Axis(0), *zs, *za];
    let cache = model.c.forward(&z.view())?;
    let logits: Vec<f64> = cache.output().iter().copied().collect();
    let (ls, la) = logits.split_at(zs.nrows());
    let (loss, ds, da) = loss_cls_with_grad(ls, la)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("l_cls is not finite ({loss})")));
    }
    let acc = classifier_accuracy(ls, la);
    let dl = Array2::from_shape_vec((logits.len(), 1), ds.into_iter().chain(da).collect()).expect("logit grad shape");
    let mut grads = vec![0.0; model.c.store.len()];
    model.c.backward(&cache, &dl, &mut grads);
    opt_c.update(model, |_| &grads);
    Ok((loss, acc))
}

/// One Phase A / Phase B update. Returns the metrics of the batch as seen
/// by the networks before they were updated.
pub fn train_step(
    state: &mut TrainState,
    batch: &PreparedBatch,
    cfg: &TrainConfig,
    epoch: usize,
    step: u64,
) -> Result<StepMetrics> {
    let b = Batch { xs: &batch.xs, xa: batch.xa.as_ref(), y: &batch.y };
    if batch.xs.dim().0 < 2 {
        return Err(Error::Argument("batch size must be at least 2".into()));
    }
    let w = cfg.loss_weights;
    let flags = match cfg.variant() {
        Variant::Baseline => None,
        Variant::Cauge(f) => Some(f),
    };
    let mut metrics = StepMetrics {
        epoch,
        step,
        l_cls: None,
        l_con: None,
        l_fac: None,
        l_gaze: 0.0,
        l_prim: None,
        classifier_accuracy: None,
    };

    if flags.is_some_and(|f| f.intr) {
        let xa = batch.xa.as_ref().expect("intervened batch present");
        let z = state.model.features(&concatenate![Axis(0), batch.xs, *xa])?;
        let (zs, za) = z.view().split_at(Axis(0), batch.xs.dim().0);
        for k in 0..cfg.classifier_steps {
            let (l, acc) = classifier_step(&mut state.model, &mut state.opt_c, &zs, &za)?;
            if k == 0 {
                metrics.l_cls = Some(l);
                metrics.classifier_accuracy = Some(acc);
            }
        }
    }

    let weights = match flags {
        None => TermWeights { gaze: Some(1.0), ..Default::default() },
        Some(f) => TermWeights {
            cls: None,
            con: f.intr.then_some(w.con),
            fac: f.fact.then_some(w.fac),
            gaze: Some(w.gaze),
        },
    };
    let out = evaluate(&state.model, &b, weights, ObjectiveOptions::default())?;
    metrics.l_con = out.l_con;
    metrics.l_fac = out.l_fac;
    metrics.l_gaze = out.l_gaze.expect("gaze term always present");
    if flags.is_some() {
        metrics.l_prim = Some(out.total);
    }
    state.opt_main.update(&mut state.model, |id| out.grads.get(id));
    Ok(metrics)
}

/// Split a permutation into batches. Intervened variants need at least two
/// samples per batch, so a trailing singleton joins the previous batch.
pub fn batch_ranges(n: usize, batch_size: usize, paired: bool) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> =
        (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if paired && out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Sample order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[tag("shuffle"), epoch as u64]));
    order
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for metrics and checkpoints; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<CheckpointRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: CheckpointRecord,
    /// Step and epoch rows produced by this invocation.
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn steps(&self) -> impl Iterator<Item = &StepMetrics> {
        self.metrics.iter().filter_map(|r| match r {
            MetricsRow::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochSummary> {
        self.metrics.iter().filter_map(|r| match r {
            MetricsRow::Epoch(e) => Some(e),
            _ => None,
        })
    }
}

fn check_resumable(cfg: &TrainConfig, rec: &CheckpointRecord) -> Result<()> {
    let mut a = cfg.clone();
    let b = &rec.config;
    a.epochs = b.epochs;
    a.checkpoint_every = b.checkpoint_every;
    if a != *b {
        return Err(Error::Incompatible("checkpoint was trained with a different configuration".into()));
    }
    if rec.epoch > cfg.epochs {
        return Err(Error::Incompatible(format!(
            "checkpoint already has {} epochs, more than the requested {}",
            rec.epoch, cfg.epochs
        )));
    }
    Ok(())
}

struct MetricsSink(Option<BufWriter<fs::File>>);

impl MetricsSink {
    fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

pub fn intermediate_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch-{epoch:04}.ckpt"))
}

/// Train on every sample of `data` for `cfg.epochs` epochs.
pub fn train(cfg: &TrainConfig, data: &Dataset, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training dataset is empty".into()));
    }
    if data.image_size() != Some(cfg.net.image_size) {
        return Err(Error::Dimension(format!(
            "dataset images are {:?} pixels, network expects {}",
            data.image_size(),
            cfg.net.image_size
        )));
    }
    let paired = matches!(cfg.variant(), Variant::Cauge(_));
    if paired && data.len() < 2 {
        return Err(Error::Argument("intervened training needs at least 2 samples".into()));
    }
    let (mut state, start_epoch, mut global_step) = match opts.resume {
        Some(rec) => {
            check_resumable(cfg, &rec)?;
            let (epoch, step) = (rec.epoch, rec.global_step);
            (TrainState { model: rec.model, opt_c: rec.opt_c, opt_main: rec.opt_main }, epoch, step)
        }
        None => (TrainState::new(cfg)?, 0, 0),
    };

    let mut sink = MetricsSink(None);
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        let file = OpenOptions::new().create(true).append(true).open(dir.join(METRICS_FILE))?;
        sink.0 = Some(BufWriter::new(file));
    }
    sink.write(&MetricsRow::Run {
        version: crate::VERSION.to_string(),
        start_epoch,
        config: Box::new(cfg.clone()),
    })?;

    let intervener = Intervener::new(&cfg.intervention, data);
    let mut rows = Vec::new();
    let record = |state: &TrainState, epoch, step| CheckpointRecord {
        config: cfg.clone(),
        epoch,
        global_step: step,
        model: state.model.clone(),
        opt_c: state.opt_c.clone(),
        opt_main: state.opt_main.clone(),
    };

    for epoch in start_epoch..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, data.len());
        let mut epoch_steps = Vec::new();
        for (bi, r) in batch_ranges(data.len(), cfg.batch_size, paired).into_iter().enumerate() {
            let idx = &order[r];
            let samples: Vec<&ImageSample> = idx.iter().map(|&i| &data.samples[i]).collect();
            let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let result = prepare_batch(cfg, &samples, &keys, &intervener, epoch)
                .and_then(|b| train_step(&mut state, &b, cfg, epoch, global_step));
            let m = match result {
                Ok(m) => m,
                Err(Error::Numeric(msg)) => {
                    let _ = sink.flush();
                    return Err(Error::Numeric(format!(
                        "{msg} at epoch {epoch}, batch {bi} (global step {global_step}); sample indices {idx:?}"
                    )));
                }
                Err(e) => return Err(e),
            };
            global_step += 1;
            sink.write(&MetricsRow::Step(m.clone()))?;
            rows.push(MetricsRow::Step(m.clone()));
            epoch_steps.push(m);
        }
        let summary = MetricsRow::Epoch(EpochSummary::from_steps(epoch, &epoch_steps));
        sink.write(&summary)?;
        rows.push(summary);
        sink.flush()?;
        let done = epoch + 1;
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                save_checkpoint(&record(&state, done, global_step), &intermediate_checkpoint_path(dir, done))?;
            }
        }
    }

    let final_record = record(&state, cfg.epochs.max(start_epoch), global_step);
    if let Some(dir) = &opts.out_dir {
        save_checkpoint(&final_record, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainOutcome { record: final_record, metrics: rows })
}

/// Parse a metrics stream written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Load(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}
