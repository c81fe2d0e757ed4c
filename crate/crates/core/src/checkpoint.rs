//! Binary checkpoints: parameters of all four networks, both optimizers'
//! moment buffers, and the training configuration that produced them.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nets::{CaugeModel, NetId};
use crate::optim::{Adam, MomentState};

const MAGIC: &[u8; 8] = b"CAUGECKP";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps over the whole run.
    pub global_step: u64,
    pub model: CaugeModel,
    /// Optimizer over the classifier.
    pub opt_c: Adam,
    /// Optimizer over feature extractor, attention and gaze predictor.
    pub opt_main: Adam,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    nets: Vec<NetId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    crate_version: String,
    config: TrainConfig,
    epoch: usize,
    global_step: u64,
    opt_c: OptimizerHeader,
    opt_main: OptimizerHeader,
    tensors: Vec<IndexEntry>,
}

fn push(entries: &mut Vec<IndexEntry>, data: &mut Vec<f64>, name: String, shape: Vec<usize>, values: &[f64]) {
    entries.push(IndexEntry { name, shape, offset: data.len(), len: values.len() });
    data.extend_from_slice(values);
}

fn moment_entries(prefix: &str, opt: &Adam, entries: &mut Vec<IndexEntry>, data: &mut Vec<f64>) {
    for s in &opt.states {
        push(entries, data, format!("{prefix}.{}.m", s.net), vec![s.m.len()], &s.m);
        push(entries, data, format!("{prefix}.{}.v", s.net), vec![s.v.len()], &s.v);
    }
}

pub fn to_bytes(rec: &CheckpointRecord) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    for id in CaugeModel::ALL {
        let store = rec.model.store(id);
        for spec in store.specs() {
            push(&mut entries, &mut data, spec.name.clone(), spec.shape.clone(), &store.values()[spec.range()]);
        }
    }
    moment_entries("adam_c", &rec.opt_c, &mut entries, &mut data);
    moment_entries("adam_main", &rec.opt_main, &mut entries, &mut data);
    let header = Header {
        crate_version: crate::VERSION.to_string(),
        config: rec.config.clone(),
        epoch: rec.epoch,
        global_step: rec.global_step,
        opt_c: OptimizerHeader { step: rec.opt_c.step, nets: rec.opt_c.nets() },
        opt_main: OptimizerHeader { step: rec.opt_main.step, nets: rec.opt_main.nets() },
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(rec: &CheckpointRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&to_bytes(rec))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Parsed {
    header: Header,
    data: Vec<f64>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let load = |m: &str| Error::Load(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(load("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Incompatible(format!(
            "format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| load("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| Error::Load(format!("header: {e}")))?;
    let raw = &bytes[20 + hlen..];
    if !raw.len().is_multiple_of(8) {
        return Err(load("tensor data is not a whole number of f64 values"));
    }
    let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(e) = header.tensors.iter().find(|e| e.offset + e.len > data.len()) {
        return Err(Error::Load(format!("tensor {} extends past end of file", e.name)));
    }
    Ok(Parsed { header, data })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::State(format!("cannot open checkpoint {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn find<'a>(p: &'a Parsed, name: &str) -> Result<&'a IndexEntry> {
    p.header
        .tensors
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Dimension(format!("tensor {name} missing from checkpoint")))
}

/// Copy every parameter tensor into `model`, which must have the same
/// architecture; the first tensor whose shape differs is named in the error.
fn fill_model(p: &Parsed, model: &mut CaugeModel) -> Result<()> {
    for id in CaugeModel::ALL {
        let specs = model.store(id).specs().to_vec();
        for spec in specs {
            let e = find(p, &spec.name)?;
            if e.shape != spec.shape {
                return Err(Error::Dimension(format!(
                    "tensor {} has shape {:?} in checkpoint but {:?} in model",
                    spec.name, e.shape, spec.shape
                )));
            }
            model.store_mut(id).values_mut()[spec.range()].copy_from_slice(&p.data[e.offset..e.offset + e.len]);
        }
    }
    let expected: usize = CaugeModel::ALL.iter().map(|&id| model.store(id).specs().len()).sum();
    let stored = p.header.tensors.iter().filter(|e| !e.name.starts_with("adam_")).count();
    if stored != expected {
        return Err(Error::Dimension(format!(
            "checkpoint holds {stored} parameter tensors, model has {expected}"
        )));
    }
    Ok(())
}

fn fill_adam(p: &Parsed, prefix: &str, h: &OptimizerHeader, cfg: &TrainConfig, model: &CaugeModel) -> Result<Adam> {
    let mut opt = Adam::new(cfg.adam(), model, &h.nets);
    opt.step = h.step;
    for s in &mut opt.states {
        let read = |suffix: &str, dst: &mut Vec<f64>| -> Result<()> {
            let e = find(p, &format!("{prefix}.{}.{suffix}", s.net))?;
            if e.len != dst.len() {
                return Err(Error::Dimension(format!("tensor {} has {} values, expected {}", e.name, e.len, dst.len())));
            }
            dst.copy_from_slice(&p.data[e.offset..e.offset + e.len]);
            Ok(())
        };
        let MomentState { m, v, .. } = s;
        read("m", m)?;
        read("v", v)?;
    }
    Ok(opt)
}

pub fn from_bytes(bytes: &[u8]) -> Result<CheckpointRecord> {
    let p = parse(bytes)?;
    let config = p.header.config.clone();
    config.validate()?;
    let mut model = CaugeModel::new(&config.net, config.uses_attention(), config.seed)?;
    fill_model(&p, &mut model)?;
    let opt_c = fill_adam(&p, "adam_c", &p.header.opt_c, &config, &model)?;
    let opt_main = fill_adam(&p, "adam_main", &p.header.opt_main, &config, &model)?;
    Adam::assert_disjoint(&opt_c, &opt_main)?;
    Ok(CheckpointRecord { epoch: p.header.epoch, global_step: p.header.global_step, config, model, opt_c, opt_main })
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointRecord> {
    from_bytes(&read_file(path)?)
}

/// Load only the parameters into an existing model of a chosen architecture.
pub fn load_params_into(path: &Path, model: &mut CaugeModel) -> Result<()> {
    fill_model(&parse(&read_file(path)?)?, model)
}
