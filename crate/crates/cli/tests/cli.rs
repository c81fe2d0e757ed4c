use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cauge::config::ExperimentConfig;

fn cauge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cauge"))
        .args(args)
        .env_remove("CAUGE_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> PathBuf {
    let mut exp = ExperimentConfig::desk();
    exp.data.n_train_per_domain = 16;
    exp.data.n_test_per_domain = 8;
    exp.train.epochs = 1;
    exp.train.batch_size = 8;
    exp.seeds = vec![0];
    let path = dir.join("config.json");
    fs::write(&path, exp.to_json()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_stamped(dir: &Path) {
    assert!(dir.join("config.json").is_file(), "{} lacks config.json", dir.display());
    let v = fs::read_to_string(dir.join("VERSION")).unwrap();
    assert_eq!(v.trim(), cauge::VERSION);
}

#[test]
fn generate_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    let o = cauge(&["generate", "--config", cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("data/train/manifest.jsonl").is_file());
    assert!(out.join("data/target/manifest.jsonl").is_file());
    assert_stamped(&out);

    let o = cauge(&["train", "--config", cfg, "--out", out_s, "--source", "src-e"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("checkpoint.ckpt");
    assert!(ckpt.is_file());
    assert!(out.join("metrics.jsonl").is_file());

    let eval_dir = tmp.path().join("eval");
    let target = out.join("data/target");
    let o = cauge(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        target.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_stamped(&eval_dir);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("eval_report.json")).unwrap()).unwrap();
    let mean = report["mean_error_deg"].as_f64().unwrap();
    assert!(mean.is_finite() && mean >= 0.0);
    assert_eq!(report["count"].as_u64(), Some(16));

    let inv_dir = tmp.path().join("inv");
    let o = cauge(&[
        "invariance",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        target.to_str().unwrap(),
        "--out",
        inv_dir.to_str().unwrap(),
        "--pairs",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_stamped(&inv_dir);
    assert!(inv_dir.join("invariance_report.json").is_file());

    let feats = tmp.path().join("feats/features.csv");
    let o = cauge(&[
        "export-features",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        target.to_str().unwrap(),
        "--out",
        feats.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&feats).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert_stamped(feats.parent().unwrap());
}

#[test]
fn ablate_writes_eight_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ablate");
    let o = cauge(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_stamped(&out);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 9);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert!(header.contains(&"average"));
    assert_eq!(header.iter().filter(|h| h.contains("->")).count(), 4);
    assert!(out.join("ablation.json").is_file());
}

#[test]
fn ablate_interventions_writes_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("cmp");
    let o = cauge(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--interventions"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("interventions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("ft_blend"));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    let o = cauge(&["gradcheck", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_stamped(&out);
    assert!(String::from_utf8_lossy(&o.stdout).contains("loss_fac"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = cauge(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = ExperimentConfig::desk();
    exp.train.batch_size = 0;
    let path = tmp.path().join("bad.json");
    fs::write(&path, exp.to_json()).unwrap();
    let o = cauge(&["train", "--config", path.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: config"), "{err}");
    assert!(err.contains("train.batch_size"), "{err}");
}

#[test]
fn missing_checkpoint_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cauge(&[
        "eval",
        "--checkpoint",
        tmp.path().join("nope.ckpt").to_str().unwrap(),
        "--dataset",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.ckpt"));
}

#[test]
fn relative_out_resolves_against_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = Command::new(env!("CARGO_BIN_EXE_cauge"))
        .args(["generate", "--config", cfg.to_str().unwrap(), "--out", "rel"])
        .env("CAUGE_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_stamped(&tmp.path().join("rel"));
}
