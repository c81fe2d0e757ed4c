use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cauge::checkpoint::load_checkpoint;
use cauge::config::ExperimentConfig;
use cauge::datagen::{read_dataset, write_dataset, Dataset};
use cauge::eval::{self, ExperimentData};
use cauge::gradcheck::{run_gradcheck, GradcheckConfig};
use cauge::trainer::{train, TrainOptions, FINAL_CHECKPOINT};
use cauge::{Error, Result, VERSION};

#[derive(Parser)]
#[command(name = "cauge", version, about = "Causal domain generalization for gaze estimation on synthetic domains")]
struct Cli {
    /// Worker threads for data generation and evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Relative paths resolve against CAUGE_OUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "CAUGE_OUT_ROOT", hide_env_values = true)]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the training (source) and test (target) datasets.
    Generate(Common),
    /// Train one model and write its checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory; defaults to <out>/data/train or in-memory generation.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Restrict training to one source domain.
        #[arg(long)]
        source: Option<String>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Mean angular error of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate all eight component combinations.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, counted up from --seed.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compare intervention families instead of component flags.
        #[arg(long)]
        interventions: bool,
    },
    /// Cosine similarity between clean and intervened features.
    Invariance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write F(x), pitch, yaw and domain for every sample as CSV.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::desk()),
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        let rel = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cauge-out"));
        match &self.out_root {
            Some(root) if rel.is_relative() => root.join(rel),
            _ => rel,
        }
    }
}

/// Every output directory carries the resolved config and the tool version.
fn stamp(dir: &Path, config_json: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), config_json)?;
    fs::write(dir.join("VERSION"), format!("{VERSION}\n"))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = read_dataset(dir)?;
    if ds.is_empty() {
        return Err(Error::Argument(format!("dataset {} is empty", dir.display())));
    }
    Ok(ds)
}

fn out_or_parent(out: &Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    out.clone().unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.config()?;
            let out = common.out_dir(&cfg);
            let data = ExperimentData::generate(&cfg.data)?;
            stamp(&out, &cfg.to_json())?;
            write_dataset(&data.train, &out.join("data").join("train"))?;
            if !data.test.is_empty() {
                write_dataset(&data.test, &out.join("data").join("target"))?;
            }
            println!("wrote {} training and {} target samples to {}", data.train.len(), data.test.len(), out.display());
        }
        Command::Train { common, seed, dataset, source, checkpoint } => {
            let mut cfg = common.config()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let out = common.out_dir(&cfg);
            let default_dir = out.join("data").join("train");
            let mut data = match dataset {
                Some(d) => load_dataset(&d)?,
                None if default_dir.join(cauge::datagen::MANIFEST_FILE).exists() => load_dataset(&default_dir)?,
                None => ExperimentData::generate(&cfg.data)?.train,
            };
            if let Some(src) = &source {
                data = data.filter_domains(std::slice::from_ref(src));
                if data.is_empty() {
                    return Err(Error::Argument(format!("no samples from source domain '{src}'")));
                }
            }
            let resume = checkpoint.as_deref().map(load_checkpoint).transpose()?;
            stamp(&out, &cfg.to_json())?;
            let outcome = train(&cfg.train, &data, TrainOptions { out_dir: Some(out.clone()), resume })?;
            let last = outcome.epochs().last().cloned();
            if let Some(e) = last {
                println!("epoch {} l_gaze {:.6}", e.epoch, e.l_gaze);
            }
            println!("checkpoint: {}", out.join(FINAL_CHECKPOINT).display());
        }
        Command::Eval { checkpoint, dataset, out } => {
            let rec = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            let report = eval::evaluate(&[(&rec.config, &rec.model)], &ds)?;
            let dir = out_or_parent(&out, &checkpoint);
            stamp(&dir, &serde_json::to_string_pretty(&rec.config)?)?;
            write_json(&dir.join("eval_report.json"), &report)?;
            for d in &report.domains {
                println!("{}\t{:.4} deg\t(n = {})", d.domain, d.mean_error_deg, d.count);
            }
            println!("mean\t{:.4} deg\t(n = {})", report.mean_error_deg, report.count);
        }
        Command::Ablate { common, seeds, seed, interventions } => {
            let cfg = common.config()?;
            let seed_list: Vec<u64> = match seeds {
                Some(0) => return Err(Error::Argument("--seeds must be at least 1".into())),
                Some(k) => (0..k as u64).map(|i| seed + i).collect(),
                None => cfg.seeds.clone(),
            };
            let out = common.out_dir(&cfg);
            stamp(&out, &cfg.to_json())?;
            let data = ExperimentData::generate(&cfg.data)?;
            let (report, stem) = if interventions {
                (eval::intervention_comparison(&cfg, &seed_list, &data)?, "interventions")
            } else {
                (eval::ablation_matrix(&cfg, &seed_list, &data)?, "ablation")
            };
            report.write(&out, stem)?;
            print!("{}", report.to_csv()?);
        }
        Command::Invariance { checkpoint, dataset, out, pairs, seed } => {
            let rec = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            let report = eval::invariance_score(&rec.model, &ds, &rec.config.intervention, pairs, seed)?;
            let dir = out_or_parent(&out, &checkpoint);
            stamp(&dir, &serde_json::to_string_pretty(&rec.config)?)?;
            write_json(&dir.join("invariance_report.json"), &report)?;
            println!("cosine mean {:.6} std {:.6} over {} pairs", report.mean, report.std, report.n_pairs);
        }
        Command::ExportFeatures { checkpoint, dataset, out } => {
            let rec = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&dataset)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                stamp(dir, &serde_json::to_string_pretty(&rec.config)?)?;
            }
            let rows = eval::export_features(&rec.model, &ds, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::Gradcheck { seed, out } => {
            let report = run_gradcheck(&GradcheckConfig { seed, ..GradcheckConfig::default() })?;
            for c in &report.components {
                println!("{:<10} max_rel_error {:.3e}  ({} entries)", c.component, c.max_rel_error, c.checked);
            }
            if let Some(dir) = out {
                stamp(&dir, &serde_json::to_string_pretty(&GradcheckConfig { seed, ..Default::default() })?)?;
                write_json(&dir.join("gradcheck.json"), &report)?;
            }
            if !report.passed() {
                return Err(Error::Numeric(format!("gradient check exceeded tolerance {:e}", report.tolerance)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.detail().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
