//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 5, 6, 7 (second half) and 9 share one trained grid, built once.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cauge::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use cauge::config::{AblationFlags, ExperimentConfig, TrainConfig, TrainMode};
use cauge::datagen::{render_sample, Dataset, GazeLabel, ImageSample};
use cauge::eval::{
    ablation_variants, angular_error, intervention_comparison, invariance_score, run_matrix_cells, ExperimentData,
    MatrixReport, TrainedCell,
};
use cauge::gradcheck::{run_gradcheck, GradcheckConfig};
use cauge::intervene::{AugmixConfig, InterventionConfig, Intervener, ALLOWED_OPS};
use cauge::losses::{correlation_matrix, loss_fac, CorrelationMatrix};
use cauge::nets::{CaugeModel, NetId};
use cauge::optim::Adam;
use cauge::trainer::{classifier_step, train, MetricsRow, TrainOptions, TrainOutcome, METRICS_FILE};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- shared grid ----

struct Grid {
    exp: ExperimentConfig,
    data: ExperimentData,
    ablation: MatrixReport,
    baseline: MatrixReport,
    cells: Vec<TrainedCell>,
    baseline_cells: Vec<TrainedCell>,
}

static GRID: OnceLock<std::result::Result<Grid, String>> = OnceLock::new();

fn grid() -> std::result::Result<&'static Grid, String> {
    GRID.get_or_init(|| {
        let exp = ExperimentConfig::desk();
        let data = ExperimentData::generate(&exp.data).map_err(e2s)?;
        let variants = ablation_variants(&exp.train);
        let (ablation, cells) = run_matrix_cells(&exp, &variants, &exp.seeds, &data).map_err(e2s)?;
        // independent run through the plain baseline mode
        let base = vec![("baseline".to_string(), TrainConfig { mode: TrainMode::Baseline, ..exp.train.clone() })];
        let (baseline, baseline_cells) = run_matrix_cells(&exp, &base, &exp.seeds, &data).map_err(e2s)?;
        Ok(Grid { exp, data, ablation, baseline, cells, baseline_cells })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn row_avg(report: &MatrixReport, label: &str) -> std::result::Result<f64, String> {
    let row = report.row(label).ok_or(format!("row '{label}' missing"))?;
    row.average.ok_or(format!("row '{label}' {}: {:?}", row.status, row.error))
}

// ---- criteria ----

fn c1_gradients() -> Check {
    let started = Instant::now();
    let report = run_gradcheck(&GradcheckConfig::default()).map_err(e2s)?;
    let secs = started.elapsed().as_secs_f64();
    for name in ["F", "AL", "G", "C", "loss_cls", "loss_con", "loss_fac", "loss_gaze", "loss_prim"] {
        let c = report.component(name).ok_or(format!("component {name} not checked"))?;
        ensure(c.checked > 0, format!("{name}: no entries"))?;
        ensure(c.max_rel_error <= 1e-4, format!("{name}: max rel error {:.3e}", c.max_rel_error))?;
    }
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    let worst = report.components.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(format!("max rel error {worst:.2e} over {} components in {secs:.2} s", report.components.len()))
}

/// Plain per-entry Pearson correlation, written from the definition.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

fn c2_factorization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, n) = (16, 8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let scale: f64 = rng.gen_range(0.1..10.0);
        let zs = Array2::from_shape_fn((b, n), |_| scale * rng.gen_range(-1.0..1.0));
        let za = Array2::from_shape_fn((b, n), |(i, j)| zs[[i, (j + 1) % n]] * 0.5 + rng.gen_range(-1.0..1.0));
        let m = correlation_matrix(&zs.view(), &za.view()).map_err(e2s)?;
        for i in 0..n {
            let ci: Vec<f64> = zs.column(i).to_vec();
            for j in 0..n {
                let cj: Vec<f64> = za.column(j).to_vec();
                worst = worst.max((m.0[[i, j]] - pearson(&ci, &cj)).abs());
            }
        }
    }
    ensure(worst <= 1e-10, format!("max deviation from Pearson oracle {worst:.3e}"))?;
    let at_identity = loss_fac(&CorrelationMatrix::identity(8)).map_err(e2s)?;
    ensure(at_identity == 0.0, format!("loss_fac(I) = {at_identity:e}"))?;
    let example = loss_fac(&CorrelationMatrix(ndarray::arr2(&[[1.0, 0.5], [0.5, 1.0]]))).map_err(e2s)?;
    ensure((example - 0.25).abs() <= 1e-15, format!("2x2 example gives {example}"))?;
    Ok(format!("max |M - pearson| {worst:.2e} over 100 batches; loss_fac(I) = 0; 2x2 example = {example}"))
}

fn c3_label_safety() -> Check {
    let exp = ExperimentConfig::desk();
    let cfg = InterventionConfig::default();
    let forbidden = ["shear", "translate", "rotate"];
    let names: Vec<&str> = AugmixConfig::default().allowed_ops().iter().map(|op| op.name()).collect();
    ensure(names.len() == ALLOWED_OPS.len(), "op list mismatch")?;
    for n in &names {
        ensure(!forbidden.iter().any(|f| n.contains(f)), format!("geometric op '{n}' present"))?;
    }
    let mut gaze_rng = ChaCha8Rng::seed_from_u64(3);
    let domains = &exp.data.source_domains;
    let samples: Vec<ImageSample> = (0..1000)
        .map(|i| {
            let d = &domains[i % domains.len()];
            let label = GazeLabel::new(gaze_rng.gen_range(-0.5..0.5), gaze_rng.gen_range(-0.5..0.5)).unwrap();
            let mut s = render_sample(label, &d.sample_nuisance(i), exp.data.image_size, d.render_seed(i))?;
            s.domain = d.name.clone();
            s.index = i;
            Ok(s)
        })
        .collect::<cauge::Result<_>>()
        .map_err(e2s)?;
    let pool = Dataset { samples: samples.clone() };
    let intervener = Intervener::new(&cfg, &pool);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut changed = 0;
    for s in &samples {
        let out = intervener.apply_sample(s, &mut rng).map_err(e2s)?;
        ensure(out.image.iter().all(|v| (0.0..=1.0).contains(v)), format!("sample {} left [0, 1]", s.index))?;
        ensure(out.label == s.label, format!("sample {} label changed", s.index))?;
        let l2 = (&out.image - &s.image).mapv(|v| v * v).sum().sqrt();
        if l2 > 1e-6 {
            changed += 1;
        }
    }
    let frac = changed as f64 / samples.len() as f64;
    ensure(frac >= 0.99, format!("only {frac:.3} of outputs differ from their input"))?;
    Ok(format!("{changed}/1000 changed, all in [0, 1], labels intact; ops: {}", names.join(",")))
}

fn c4_attention_range() -> Check {
    let exp = ExperimentConfig::desk();
    let model = CaugeModel::new(&exp.train.net, true, 4).map_err(e2s)?;
    let n = model.feature_dim();
    let hidden = model.al.hidden_dims();
    ensure(hidden == vec![n / 8], format!("AL hidden dims {hidden:?} for N = {n}"))?;
    ensure(model.al.input_dim() == n && model.al.output_dim() == n, "AL is not N -> N")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let total = 100_000;
    let chunk = 10_000;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for _ in 0..total / chunk {
        let z = Array2::from_shape_fn((chunk, n), |_| rng.gen_range(-5.0..5.0));
        let w = model.attention(&z).map_err(e2s)?;
        ensure(w.dim() == (chunk, n), "weight shape")?;
        lo = lo.min(w.iter().copied().fold(f64::INFINITY, f64::min));
        hi = hi.max(w.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    ensure(lo > 0.0 && hi < 1.0, format!("weights span [{lo}, {hi}]"))?;
    Ok(format!("1e5 vectors, weights in [{lo:.4}, {hi:.4}], N = {n}, bottleneck {}", n / 8))
}

fn c5_generalization() -> Check {
    let g = grid()?;
    let label = AblationFlags::ALL_ON.to_string();
    let cauge = row_avg(&g.ablation, &label)?;
    let base = row_avg(&g.baseline, "baseline")?;
    let secs: f64 = g.cells.iter().filter(|c| c.label == label).chain(&g.baseline_cells).map(|c| c.train_secs).sum();
    let ratio = cauge / base;
    let on = g.ablation.row(&label).unwrap();
    let off = g.baseline.row("baseline").unwrap();
    let per_seed: Vec<String> = on
        .per_seed
        .iter()
        .zip(&off.per_seed)
        .map(|(a, b)| format!("seed {} {:.2}/{:.2}", a.seed, a.average, b.average))
        .collect();
    let msg = format!(
        "CauGE {cauge:.3} deg vs baseline {base:.3} deg (ratio {ratio:.3}) over {} seeds x {} tasks [{}]; training {:.0} s",
        g.exp.seeds.len(),
        g.exp.tasks.len(),
        per_seed.join(", "),
        secs
    );
    ensure(ratio <= 0.9, msg.clone())?;
    ensure(secs <= 1800.0, msg.clone())?;
    Ok(msg)
}

fn c6_ablation() -> Check {
    let g = grid()?;
    let r = &g.ablation;
    ensure(r.rows.len() == 8, format!("{} rows", r.rows.len()))?;
    let labels: Vec<String> = AblationFlags::all_combinations().iter().map(|f| f.to_string()).collect();
    for l in &labels {
        row_avg(r, l)?;
    }
    let csv = r.to_csv().map_err(e2s)?;
    let lines: Vec<&str> = csv.lines().collect();
    ensure(lines.len() == 9, format!("csv has {} lines", lines.len()))?;
    let header: Vec<&str> = lines[0].split(',').collect();
    for t in &r.tasks {
        ensure(header.contains(&t.as_str()), format!("csv lacks column {t}"))?;
    }
    ensure(header.contains(&"average"), "csv lacks average column")?;
    let back: MatrixReport = serde_json::from_str(&serde_json::to_string(r).map_err(e2s)?).map_err(e2s)?;
    ensure(&back == r, "json round trip changed the report")?;

    let off = r.row(&AblationFlags::ALL_OFF.to_string()).unwrap();
    let base = g.baseline.row("baseline").unwrap();
    let mut dev = 0.0f64;
    for (a, b) in off.per_seed.iter().zip(&base.per_seed) {
        for (x, y) in a.task_errors.iter().zip(&b.task_errors) {
            dev = dev.max((x - y).abs());
        }
    }
    ensure(dev <= 1e-6, format!("all-off row deviates from baseline by {dev:e}"))?;

    let avgs: Vec<(String, f64)> = labels.iter().map(|l| (l.clone(), row_avg(r, l).unwrap())).collect();
    let min = avgs.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let all_on = row_avg(r, &AblationFlags::ALL_ON.to_string())?;
    let table = avgs.iter().map(|(l, a)| format!("{l} {a:.3}")).collect::<Vec<_>>().join(", ");
    for s in 0..r.seeds.len() {
        let per: Vec<f64> = r.rows.iter().map(|row| row.per_seed[s].average).collect();
        let m = per.iter().copied().fold(f64::INFINITY, f64::min);
        let on = r.row(&AblationFlags::ALL_ON.to_string()).unwrap().per_seed[s].average;
        if on > 1.05 * m {
            println!("  note: seed {} all-on {on:.3} vs row minimum {m:.3}", r.seeds[s]);
        }
    }
    let msg = format!("all-on {all_on:.3} vs min {min:.3} (ratio {:.3}); off = baseline within {dev:.1e}; {table}", all_on / min);
    ensure(all_on <= 1.05 * min, msg.clone())?;
    Ok(msg)
}

/// Features that a linear classifier separates: the first coordinate is
/// positive for originals and negative for intervened samples.
fn separable(rng: &mut ChaCha8Rng, b: usize, n: usize) -> (Array2<f64>, Array2<f64>) {
    let mut make = |sign: f64| {
        Array2::from_shape_fn((b, n), |(_, j)| {
            if j == 0 {
                sign * rng.gen_range(0.5..2.0)
            } else {
                rng.gen_range(0.0..2.0)
            }
        })
    };
    let zs = make(1.0);
    let za = make(-1.0);
    (zs, za)
}

fn c7_adversarial() -> Check {
    let exp = ExperimentConfig::desk();
    let mut model = CaugeModel::new(&exp.train.net, true, 7).map_err(e2s)?;
    let mut opt = Adam::new(exp.train.adam(), &model, &[NetId::C]);
    let frozen: Vec<String> = [NetId::F, NetId::AL, NetId::G].iter().map(|&id| model.store(id).fingerprint()).collect();
    let n = model.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (zs, za) = separable(&mut rng, 32, n);
        classifier_step(&mut model, &mut opt, &zs.view(), &za.view()).map_err(e2s)?;
    }
    let after: Vec<String> = [NetId::F, NetId::AL, NetId::G].iter().map(|&id| model.store(id).fingerprint()).collect();
    ensure(frozen == after, "classifier steps modified F, AL or G")?;
    let (zs, za) = separable(&mut rng, 512, n);
    let ls = model.classify_logits(&zs).map_err(e2s)?;
    let la = model.classify_logits(&za).map_err(e2s)?;
    let acc = cauge::objective::classifier_accuracy(&ls, &la);
    ensure(acc >= 0.95, format!("frozen-feature accuracy {acc:.3} after 200 steps"))?;

    let g = grid()?;
    let label = AblationFlags::ALL_ON.to_string();
    let mut accs = Vec::new();
    for c in g.cells.iter().filter(|c| c.label == label) {
        let a = c.last_epoch.as_ref().and_then(|e| e.classifier_accuracy).ok_or("no classifier accuracy recorded")?;
        accs.push(format!("{:.3}", a));
        ensure((0.35..=0.65).contains(&a), format!("seed {} {}: final-epoch accuracy {a:.3}", c.config.seed, c.source))?;
    }
    Ok(format!("frozen-feature accuracy {acc:.3}; final-epoch accuracy per run [{}]", accs.join(", ")))
}

/// Great-circle distance via the haversine formula on (latitude, longitude)
/// pairs, with pitch as latitude and yaw as longitude.
fn haversine_deg(a: GazeLabel, b: GazeLabel) -> f64 {
    let dlat = b.pitch - a.pitch;
    let dlon = b.yaw - a.yaw;
    let h = (dlat / 2.0).sin().powi(2) + a.pitch.cos() * b.pitch.cos() * (dlon / 2.0).sin().powi(2);
    (2.0 * h.sqrt().min(1.0).asin()).to_degrees()
}

fn c8_angular() -> Check {
    let g = |p: f64, y: f64| GazeLabel { pitch: p, yaw: y };
    let table = [
        (g(0.0, 0.0), g(0.0, 0.0), 0.0),
        (g(0.3, -0.2), g(0.3, -0.2), 0.0),
        (g(0.0, 0.0), g(0.0, PI / 2.0), 90.0),
        (g(0.0, 0.0), g(PI / 2.0, 0.0), 90.0),
        (g(0.0, -PI / 4.0), g(0.0, PI / 4.0), 90.0),
        (g(0.0, 0.0), g(0.0, PI), 180.0),
        (g(0.0, -PI / 2.0), g(0.0, PI / 2.0), 180.0),
    ];
    let mut worst = 0.0f64;
    for (a, b, want) in table {
        worst = worst.max((angular_error(a, b) - want).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let a = g(rng.gen_range(-1.2..1.2), rng.gen_range(-3.0..3.0));
        let b = g(rng.gen_range(-1.2..1.2), rng.gen_range(-3.0..3.0));
        worst = worst.max((angular_error(a, b) - haversine_deg(a, b)).abs());
    }
    ensure(worst <= 1e-9, format!("max deviation {worst:e} deg"))?;
    Ok(format!("{} table cases and 20 random pairs, max deviation {worst:.1e} deg", table.len()))
}

fn c9_invariance() -> Check {
    let g = grid()?;
    let exp = &g.exp;
    let label = AblationFlags::ALL_ON.to_string();
    let mut lines = Vec::new();
    let mut wins = 0;
    for &seed in &exp.seeds {
        let score = |cells: &[TrainedCell], label: &str| -> std::result::Result<f64, String> {
            let mine: Vec<&TrainedCell> = cells.iter().filter(|c| c.label == label && c.config.seed == seed).collect();
            ensure(!mine.is_empty(), format!("no '{label}' models for seed {seed}"))?;
            let mut total = 0.0;
            for c in &mine {
                let r = invariance_score(&c.model, &g.data.test, &exp.train.intervention, exp.eval.invariance_pairs, seed)
                    .map_err(e2s)?;
                total += r.mean;
            }
            Ok(total / mine.len() as f64)
        };
        let cauge = score(&g.cells, &label)?;
        let base = score(&g.baseline_cells, "baseline")?;
        if cauge > base {
            wins += 1;
        }
        lines.push(format!("seed {seed}: {cauge:.4} vs {base:.4}"));
    }
    let msg = format!("CauGE vs baseline cosine: {}", lines.join("; "));
    ensure(wins == exp.seeds.len(), msg.clone())?;
    Ok(msg)
}

fn c10_ft_blend() -> Check {
    let mut exp = ExperimentConfig::desk();
    exp.data.n_train_per_domain = 64;
    exp.data.n_test_per_domain = 32;
    exp.train.epochs = 2;
    let data = ExperimentData::generate(&exp.data).map_err(e2s)?;
    let report = intervention_comparison(&exp, &[0], &data).map_err(e2s)?;
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    ensure(labels == ["baseline", "cauge+augmix", "cauge+ft_blend"], format!("rows {labels:?}"))?;
    let mut parts = Vec::new();
    for r in &report.rows {
        let avg = r.average.ok_or(format!("{}: {} {:?}", r.label, r.status, r.error))?;
        ensure(r.task_errors.len() == exp.tasks.len(), format!("{}: {} task columns", r.label, r.task_errors.len()))?;
        parts.push(format!("{} {avg:.3}", r.label));
    }
    let csv = report.to_csv().map_err(e2s)?;
    ensure(csv.lines().count() == 4, "csv row count")?;
    Ok(format!("report rows: {} (ordering recorded, not asserted)", parts.join(", ")))
}

fn step_rows(outcome: &TrainOutcome) -> Vec<Vec<f64>> {
    outcome
        .steps()
        .map(|s| {
            [Some(s.l_gaze), s.l_cls, s.l_con, s.l_fac, s.l_prim, s.classifier_accuracy]
                .iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect()
        })
        .collect()
}

fn max_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| if x.is_nan() && y.is_nan() { 0.0 } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

fn params(m: &CaugeModel) -> Vec<f64> {
    CaugeModel::ALL.iter().flat_map(|&id| m.store(id).values().to_vec()).collect()
}

fn c11_determinism() -> Check {
    let mut exp = ExperimentConfig::desk();
    exp.data.n_train_per_domain = 48;
    exp.data.n_test_per_domain = 8;
    let data = ExperimentData::generate(&exp.data).map_err(e2s)?;
    let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 11, ..exp.train.clone() };

    let a = train(&cfg, &data.train, TrainOptions::default()).map_err(e2s)?;
    let b = train(&cfg, &data.train, TrainOptions::default()).map_err(e2s)?;
    let (ra, rb) = (step_rows(&a), step_rows(&b));
    ensure(ra.len() == rb.len() && !ra.is_empty(), "step counts differ")?;
    let rerun = max_dev(&ra, &rb);
    ensure(rerun <= 1e-6, format!("rerun metrics deviate by {rerun:e}"))?;

    let dir = tempfile::tempdir().map_err(e2s)?;
    let path = dir.path().join("roundtrip.ckpt");
    save_checkpoint(&a.record, &path).map_err(e2s)?;
    let loaded = load_checkpoint(&path).map_err(e2s)?;
    let bitwise = params(&loaded.model).iter().zip(params(&a.record.model)).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(bitwise && loaded == a.record, "checkpoint round trip is not exact")?;
    ensure(to_bytes(&from_bytes(&to_bytes(&a.record)).map_err(e2s)?) == to_bytes(&a.record), "re-serialized bytes differ")?;

    let first_dir = dir.path().join("first");
    let one = TrainConfig { epochs: 1, ..cfg.clone() };
    train(&one, &data.train, TrainOptions { out_dir: Some(first_dir.clone()), resume: None }).map_err(e2s)?;
    let resume = load_checkpoint(&first_dir.join(cauge::trainer::FINAL_CHECKPOINT)).map_err(e2s)?;
    let resumed =
        train(&cfg, &data.train, TrainOptions { out_dir: Some(first_dir.clone()), resume: Some(resume) }).map_err(e2s)?;
    let pa = params(&a.record.model);
    let pr = params(&resumed.record.model);
    let param_dev = pa.iter().zip(&pr).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(param_dev <= 1e-6, format!("resumed parameters deviate by {param_dev:e}"))?;
    let tail = ra.len() - step_rows(&resumed).len();
    let resume_dev = max_dev(&ra[tail..], &step_rows(&resumed));
    ensure(resume_dev <= 1e-6, format!("resumed metrics deviate by {resume_dev:e}"))?;
    let appended = cauge::trainer::read_metrics(&first_dir.join(METRICS_FILE)).map_err(e2s)?;
    let runs = appended.iter().filter(|r| matches!(r, MetricsRow::Run { .. })).count();
    ensure(runs == 2, format!("metrics stream has {runs} run headers"))?;
    Ok(format!(
        "rerun dev {rerun:.1e}; checkpoint bitwise; resume 1+1 vs 2 epochs: params {param_dev:.1e}, metrics {resume_dev:.1e}"
    ))
}

fn main() -> ExitCode {
    let checks: [Criterion; 11] = [
        ("gradient correctness", c1_gradients),
        ("factorization-loss oracle", c2_factorization),
        ("intervention label safety", c3_label_safety),
        ("attention-gate range", c4_attention_range),
        ("domain-generalization effect", c5_generalization),
        ("ablation harness", c6_ablation),
        ("adversarial-loop sanity", c7_adversarial),
        ("angular-error oracle", c8_angular),
        ("feature invariance", c9_invariance),
        ("ft_blend comparison harness", c10_ft_blend),
        ("determinism and persistence", c11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1} s): {detail}", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
