//! Angular error, cross-domain evaluation, feature invariance, experiment
//! matrices and feature export.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AblationFlags, DataConfig, ExperimentConfig, TrainConfig, TrainMode, Variant};
use crate::datagen::{fmt_f64, generate_dataset_with_limit, Dataset, GazeLabel, Image, ImageSample};
use crate::error::{Error, Result};
use crate::intervene::{InterventionConfig, InterventionKind, Intervener};
use crate::nets::{to_batch, CaugeModel};
use crate::rng::{rng_for, tag};
use crate::trainer::{train, EpochSummary, TrainOptions, TrainOutcome};

/// Images per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Unit gaze direction, looking down the negative z axis at (0, 0).
pub fn gaze_to_vector(g: GazeLabel) -> [f64; 3] {
    let (sp, cp) = g.pitch.sin_cos();
    let (sy, cy) = g.yaw.sin_cos();
    [-cp * sy, -sp, -cp * cy]
}

/// Angle between two gaze directions, in degrees.
pub fn angular_error(pred: GazeLabel, truth: GazeLabel) -> f64 {
    let a = gaze_to_vector(pred);
    let b = gaze_to_vector(truth);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainError {
    pub domain: String,
    pub mean_error_deg: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub mean_error_deg: f64,
    pub domains: Vec<DomainError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over samples, then over seeds.
    pub mean_error_deg: f64,
    pub count: usize,
    /// Per-domain means averaged over seeds.
    pub domains: Vec<DomainError>,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedEval>,
    pub config: TrainConfig,
    pub version: String,
}

/// Run the model over chunks of images, sharded across the rayon pool.
fn map_chunks<T: Send>(
    samples: &[&ImageSample],
    f: impl Fn(&[&ImageSample]) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let parts = samples.par_chunks(EVAL_CHUNK).map(&f).collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Per-sample angular errors of the inference path `G(F(x) * AL(F(x)))`.
pub fn sample_errors(model: &CaugeModel, dataset: &Dataset) -> Result<Vec<f64>> {
    let refs: Vec<&ImageSample> = dataset.samples.iter().collect();
    map_chunks(&refs, |chunk| {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let preds = model.predict_images(&images)?;
        Ok(preds.into_iter().zip(chunk).map(|(p, s)| angular_error(p, s.label)).collect())
    })
}

fn domain_breakdown(dataset: &Dataset, errors: &[f64]) -> Vec<DomainError> {
    dataset
        .domain_names()
        .into_iter()
        .map(|d| {
            let v: Vec<f64> =
                dataset.samples.iter().zip(errors).filter(|(s, _)| s.domain == d).map(|(_, e)| *e).collect();
            DomainError { mean_error_deg: v.iter().sum::<f64>() / v.len() as f64, count: v.len(), domain: d }
        })
        .collect()
}

/// Errors of one model on a dataset, with a per-domain breakdown.
pub fn evaluate_model(model: &CaugeModel, dataset: &Dataset, seed: u64) -> Result<SeedEval> {
    if dataset.is_empty() {
        return Err(Error::Argument("evaluation dataset is empty".into()));
    }
    let before = model.fingerprint();
    let errors = sample_errors(model, dataset)?;
    if model.fingerprint() != before {
        return Err(Error::State("parameters changed during evaluation".into()));
    }
    Ok(SeedEval {
        seed,
        mean_error_deg: errors.iter().sum::<f64>() / errors.len() as f64,
        domains: domain_breakdown(dataset, &errors),
    })
}

/// Evaluate one or more trained models (one per seed) on the same dataset.
pub fn evaluate(models: &[(&TrainConfig, &CaugeModel)], dataset: &Dataset) -> Result<EvalReport> {
    let (first_cfg, _) = models.first().ok_or_else(|| Error::Argument("no models to evaluate".into()))?;
    let per_seed =
        models.iter().map(|(cfg, m)| evaluate_model(m, dataset, cfg.seed)).collect::<Result<Vec<_>>>()?;
    let k = per_seed.len() as f64;
    let domains = per_seed[0]
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| DomainError {
            domain: d.domain.clone(),
            count: d.count,
            mean_error_deg: per_seed.iter().map(|s| s.domains[i].mean_error_deg).sum::<f64>() / k,
        })
        .collect();
    Ok(EvalReport {
        mean_error_deg: per_seed.iter().map(|s| s.mean_error_deg).sum::<f64>() / k,
        count: dataset.len(),
        domains,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        per_seed,
        config: (*first_cfg).clone(),
        version: crate::VERSION.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainInvariance {
    pub domain: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Cosine similarity between features of clean images and intervened copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub mean: f64,
    pub std: f64,
    pub n_pairs: usize,
    pub domains: Vec<DomainInvariance>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb)).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Features of `n_pairs` samples (drawn with a seeded permutation, cycling
/// when `n_pairs` exceeds the dataset) against one intervened copy each.
pub fn invariance_score(
    model: &CaugeModel,
    dataset: &Dataset,
    intervention: &InterventionConfig,
    n_pairs: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    if n_pairs == 0 {
        return Err(Error::Argument("n_pairs must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Argument("invariance dataset is empty".into()));
    }
    intervention.validate()?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_for(seed, &[tag("invariance-order")]));
    let picks: Vec<&ImageSample> = (0..n_pairs).map(|i| &dataset.samples[order[i % order.len()]]).collect();
    let intervener = Intervener::new(intervention, dataset);
    let keyed: Vec<(usize, &ImageSample)> = picks.into_iter().enumerate().collect();
    let sims: Vec<f64> = keyed
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let aug = chunk
                .iter()
                .map(|(k, s)| intervener.apply(s, &mut rng_for(seed, &[tag("invariance"), *k as u64])))
                .collect::<Result<Vec<Image>>>()?;
            let clean: Vec<&Image> = chunk.iter().map(|(_, s)| &s.image).collect();
            let aug_refs: Vec<&Image> = aug.iter().collect();
            let zs = model.features(&to_batch(&clean, &model.config)?)?;
            let za = model.features(&to_batch(&aug_refs, &model.config)?)?;
            Ok(zs.outer_iter().zip(za.outer_iter()).map(|(a, b)| cosine(&a.to_vec(), &b.to_vec())).collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let (mean, std) = mean_std(&sims);
    let mut names: Vec<String> = Vec::new();
    for (_, s) in &keyed {
        if !names.contains(&s.domain) {
            names.push(s.domain.clone());
        }
    }
    let domains = names
        .into_iter()
        .map(|d| {
            let v: Vec<f64> = keyed.iter().zip(&sims).filter(|((_, s), _)| s.domain == d).map(|(_, c)| *c).collect();
            let (mean, std) = mean_std(&v);
            DomainInvariance { domain: d, mean, std, count: v.len() }
        })
        .collect();
    Ok(InvarianceReport { mean, std, n_pairs, domains })
}

/// Training split (all source domains) and test split (all target domains).
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    pub fn generate(data: &DataConfig) -> Result<Self> {
        data.validate()?;
        let train = generate_dataset_with_limit(
            &data.source_domains,
            data.n_train_per_domain,
            data.train_gaze_seed,
            data.image_size,
            data.gaze_limit,
        )?;
        let test = if data.target_domains.is_empty() {
            Dataset::default()
        } else {
            generate_dataset_with_limit(
                &data.target_domains,
                data.n_test_per_domain,
                data.test_gaze_seed,
                data.image_size,
                data.gaze_limit,
            )?
        };
        Ok(ExperimentData { train, test })
    }

    pub fn source(&self, name: &str) -> Dataset {
        self.train.filter_domains(&[name.to_string()])
    }

    pub fn target(&self, name: &str) -> Dataset {
        self.test.filter_domains(&[name.to_string()])
    }
}

/// Train one model on a single source domain.
pub fn train_on_source(cfg: &TrainConfig, data: &ExperimentData, source: &str) -> Result<TrainOutcome> {
    let ds = data.source(source);
    if ds.is_empty() {
        return Err(Error::Config(format!("source domain '{source}' has no training samples")));
    }
    train(cfg, &ds, TrainOptions::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    /// Mean target error per task, in task order.
    pub task_errors: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub label: String,
    pub mode: TrainMode,
    pub flags: AblationFlags,
    pub intervention: String,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Per-task errors averaged over seeds; empty for failed rows.
    pub task_errors: Vec<f64>,
    pub average: Option<f64>,
    pub per_seed: Vec<SeedRow>,
}

/// Rows are training variants, columns are transfer tasks plus the average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub tasks: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<MatrixRow>,
    pub version: String,
}

fn check_disjoint(exp: &ExperimentConfig) -> Result<()> {
    let train: HashSet<&str> = exp.data.source_domains.iter().map(|d| d.name.as_str()).collect();
    for t in &exp.tasks {
        if train.contains(t.target.as_str()) {
            return Err(Error::Config(format!("task {}: target is also a training domain", t.name())));
        }
    }
    Ok(())
}

struct CellResult {
    variant: usize,
    seed_pos: usize,
    source: String,
    /// Per-target mean error on the test split.
    errors: Vec<(String, f64)>,
    trained: TrainedCell,
}

/// A model trained by the matrix, kept for further analysis.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub label: String,
    pub config: TrainConfig,
    pub source: String,
    pub model: CaugeModel,
    pub last_epoch: Option<EpochSummary>,
    pub train_secs: f64,
}

/// Train every variant on every source domain for every seed, and evaluate
/// each model on the targets its tasks name. Failed cells mark their row as
/// failed; the remaining rows are still reported.
pub fn run_matrix(
    exp: &ExperimentConfig,
    variants: &[(String, TrainConfig)],
    seeds: &[u64],
    data: &ExperimentData,
) -> Result<MatrixReport> {
    Ok(run_matrix_cells(exp, variants, seeds, data)?.0)
}

/// [`run_matrix`], also returning every successfully trained model.
pub fn run_matrix_cells(
    exp: &ExperimentConfig,
    variants: &[(String, TrainConfig)],
    seeds: &[u64],
    data: &ExperimentData,
) -> Result<(MatrixReport, Vec<TrainedCell>)> {
    exp.validate()?;
    check_disjoint(exp)?;
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed required".into()));
    }
    let sources = exp.task_sources();
    let mut cells: Vec<(usize, usize, String)> = Vec::new();
    for v in 0..variants.len() {
        for s in 0..seeds.len() {
            cells.extend(sources.iter().map(|src| (v, s, src.clone())));
        }
    }
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|(v, s, src)| {
            let cfg = TrainConfig { seed: seeds[*s], ..variants[*v].1.clone() };
            let started = Instant::now();
            let out = train_on_source(&cfg, data, src)?;
            let train_secs = started.elapsed().as_secs_f64();
            let errors = exp
                .tasks
                .iter()
                .filter(|t| &t.source == src)
                .map(|t| {
                    let ds = data.target(&t.target);
                    Ok((t.target.clone(), evaluate_model(&out.record.model, &ds, cfg.seed)?.mean_error_deg))
                })
                .collect::<Result<Vec<_>>>()?;
            let trained = TrainedCell {
                label: variants[*v].0.clone(),
                last_epoch: out.epochs().last().cloned(),
                model: out.record.model,
                config: cfg,
                source: src.clone(),
                train_secs,
            };
            Ok(CellResult { variant: *v, seed_pos: *s, source: src.clone(), errors, trained })
        })
        .collect();

    let mut rows = Vec::new();
    for (vi, (label, cfg)) in variants.iter().enumerate() {
        let flags = match cfg.variant() {
            Variant::Baseline => AblationFlags::ALL_OFF,
            Variant::Cauge(f) => f,
        };
        let mut row = MatrixRow {
            label: label.clone(),
            mode: cfg.mode,
            flags,
            intervention: kind_name(cfg.intervention.kind),
            status: "ok".into(),
            error: None,
            task_errors: Vec::new(),
            average: None,
            per_seed: Vec::new(),
        };
        let mine: Vec<(&(usize, usize, String), &Result<CellResult>)> =
            cells.iter().zip(&results).filter(|(c, _)| c.0 == vi).collect();
        if let Some((c, Err(e))) = mine.iter().find(|(_, r)| r.is_err()) {
            row.status = "failed".into();
            row.error = Some(format!("seed {} source {}: {e}", seeds[c.1], c.2));
            rows.push(row);
            continue;
        }
        for (si, &seed) in seeds.iter().enumerate() {
            let task_errors: Vec<f64> = exp
                .tasks
                .iter()
                .map(|t| {
                    mine.iter()
                        .filter_map(|(_, r)| r.as_ref().ok())
                        .filter(|c| c.variant == vi && c.seed_pos == si && c.source == t.source)
                        .flat_map(|c| c.errors.iter())
                        .find(|(tgt, _)| *tgt == t.target)
                        .map(|(_, e)| *e)
                        .expect("every task evaluated")
                })
                .collect();
            let average = task_errors.iter().sum::<f64>() / task_errors.len() as f64;
            row.per_seed.push(SeedRow { seed, task_errors, average });
        }
        let k = seeds.len() as f64;
        row.task_errors =
            (0..exp.tasks.len()).map(|t| row.per_seed.iter().map(|s| s.task_errors[t]).sum::<f64>() / k).collect();
        row.average = Some(row.per_seed.iter().map(|s| s.average).sum::<f64>() / k);
        rows.push(row);
    }
    let report = MatrixReport {
        tasks: exp.tasks.iter().map(|t| t.name()).collect(),
        seeds: seeds.to_vec(),
        rows,
        version: crate::VERSION.to_string(),
    };
    Ok((report, results.into_iter().filter_map(|r| r.ok()).map(|c| c.trained).collect()))
}

/// The eight flag combinations of the base configuration.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    AblationFlags::all_combinations()
        .into_iter()
        .map(|flags| (flags.to_string(), TrainConfig { mode: TrainMode::Cauge, flags, ..base.clone() }))
        .collect()
}

/// Baseline against full CauGE under each intervention family.
pub fn intervention_variants(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut out = vec![("baseline".to_string(), TrainConfig { mode: TrainMode::Baseline, ..base.clone() })];
    for kind in [InterventionKind::Augmix, InterventionKind::FtBlend] {
        let mut cfg = TrainConfig { mode: TrainMode::Cauge, flags: AblationFlags::ALL_ON, ..base.clone() };
        cfg.intervention.kind = kind;
        out.push((format!("cauge+{}", kind_name(kind)), cfg));
    }
    out
}

pub fn kind_name(kind: InterventionKind) -> String {
    match serde_json::to_value(kind) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{kind:?}"),
    }
}

pub fn intervention_comparison(exp: &ExperimentConfig, seeds: &[u64], data: &ExperimentData) -> Result<MatrixReport> {
    run_matrix(exp, &intervention_variants(&exp.train), seeds, data)
}

pub fn ablation_matrix(exp: &ExperimentConfig, seeds: &[u64], data: &ExperimentData) -> Result<MatrixReport> {
    run_matrix(exp, &ablation_variants(&exp.train), seeds, data)
}

impl MatrixReport {
    pub fn row(&self, label: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label", "intr", "fact", "attn", "intervention"];
        header.extend(self.tasks.iter().map(String::as_str));
        header.extend(["average", "status"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
            let mut rec = vec![r.label.clone(), b(r.flags.intr), b(r.flags.fact), b(r.flags.attn), r.intervention.clone()];
            if r.status == "ok" {
                rec.extend(r.task_errors.iter().map(|&e| fmt_f64(e)));
                rec.push(fmt_f64(r.average.unwrap_or(f64::NAN)));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), self.tasks.len() + 1));
            }
            rec.push(r.status.clone());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One CSV row per sample: `N` feature values, pitch, yaw, domain.
pub fn export_features(model: &CaugeModel, dataset: &Dataset, path: &Path) -> Result<usize> {
    let refs: Vec<&ImageSample> = dataset.samples.iter().collect();
    let feats: Vec<Vec<f64>> = map_chunks(&refs, |chunk| {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let z: Array2<f64> = model.features(&to_batch(&images, &model.config)?)?;
        Ok(z.outer_iter().map(|r| r.to_vec()).collect())
    })?;
    let mut w = csv::Writer::from_path(path)?;
    let n = model.feature_dim();
    let mut header: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
    header.extend(["pitch".into(), "yaw".into(), "domain".into()]);
    w.write_record(&header)?;
    for (s, z) in dataset.samples.iter().zip(&feats) {
        let mut rec: Vec<String> = z.iter().map(|&v| fmt_f64(v)).collect();
        rec.push(fmt_f64(s.label.pitch));
        rec.push(fmt_f64(s.label.yaw));
        rec.push(s.domain.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(feats.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DomainSpec, NuisanceRanges};
    use crate::nets::NetConfig;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn g(p: f64, y: f64) -> GazeLabel {
        GazeLabel { pitch: p, yaw: y }
    }

    #[test]
    fn vector_convention_anchors() {
        assert_eq!(gaze_to_vector(g(0.0, 0.0)), [-0.0, -0.0, -1.0]);
        let v = gaze_to_vector(g(0.0, PI / 2.0));
        assert_abs_diff_eq!(v[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn error_is_symmetric_and_zero_on_diagonal() {
        let mut rng = rng_for(4, &[]);
        use rand::Rng as _;
        for _ in 0..50 {
            let a = g(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = g(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            assert_abs_diff_eq!(angular_error(a, b), angular_error(b, a), epsilon = 1e-12);
            assert!(angular_error(a, a) < 1e-5);
        }
    }

    fn small() -> (CaugeModel, Dataset) {
        let cfg = NetConfig { image_size: 32, channels: vec![4, 8, 8], ..NetConfig::tiny() };
        let m = CaugeModel::new(&cfg, true, 0).unwrap();
        let doms: Vec<DomainSpec> = ["a", "b"]
            .iter()
            .enumerate()
            .map(|(i, n)| DomainSpec { name: n.to_string(), nuisance_ranges: NuisanceRanges::neutral(), seed: i as u64 })
            .collect();
        (m, generate_dataset(&doms, 10, 1, 32).unwrap())
    }

    #[test]
    fn untrained_model_scores_labels_against_straight_ahead() {
        let (m, ds) = small();
        let cfg = TrainConfig { net: m.config.clone(), ..TrainConfig::default() };
        let report = evaluate(&[(&cfg, &m)], &ds).unwrap();
        let expected: f64 =
            ds.samples.iter().map(|s| angular_error(GazeLabel::zero(), s.label)).sum::<f64>() / ds.len() as f64;
        assert_abs_diff_eq!(report.mean_error_deg, expected, epsilon = 1e-9);
        assert_eq!(report.count, 20);
        assert_eq!(report.domains.len(), 2);
        assert_eq!(report, evaluate(&[(&cfg, &m)], &ds).unwrap());
    }

    #[test]
    fn empty_dataset_rejected() {
        let (m, _) = small();
        assert!(matches!(evaluate_model(&m, &Dataset::default(), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_intervention_gives_unit_cosine() {
        let (m, ds) = small();
        let r = invariance_score(&m, &ds, &InterventionConfig::identity(), 30, 0).unwrap();
        assert_eq!(r.n_pairs, 30);
        assert!((r.mean - 1.0).abs() < 1e-6 && r.std < 1e-6);
        let r = invariance_score(&m, &ds, &InterventionConfig::default(), 30, 0).unwrap();
        assert!(r.mean < 1.0);
        assert!(r.domains.iter().all(|d| (-1.0..=1.0).contains(&d.mean)));
    }

    #[test]
    fn feature_export_round_trips() {
        let (m, ds) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        assert_eq!(export_features(&m, &ds, &path).unwrap(), 20);
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap().len(), m.feature_dim() + 3);
        let images: Vec<&Image> = ds.samples.iter().map(|s| &s.image).collect();
        let z = m.features(&to_batch(&images, &m.config).unwrap()).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 20);
        for (i, row) in rows.iter().enumerate() {
            for j in 0..m.feature_dim() {
                assert!((row[j].parse::<f64>().unwrap() - z[[i, j]]).abs() < 1e-12);
            }
        }
    }
}
