//! Central finite-difference verification of every analytic gradient.

use ndarray::{Array2, Array4};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossWeights;
use crate::nets::{CaugeModel, NetConfig};
use crate::objective::{evaluate, Batch, ObjectiveOptions, TermWeights};
use crate::rng::{rng_for, tag};

/// Relative errors use `max(|analytic|, |numeric|, DENOM_FLOOR)` as the
/// denominator so that entries whose true gradient is zero are judged on
/// absolute error.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub step: f64,
    pub batch: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { step: 1e-5, batch: 4, seed: 0, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub components: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.max_rel_error <= self.tolerance)
    }

    pub fn component(&self, name: &str) -> Option<&ComponentResult> {
        self.components.iter().find(|c| c.component == name)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Named loss terms and the weights that isolate each of them.
pub fn loss_terms() -> Vec<(&'static str, TermWeights)> {
    let w = LossWeights::default();
    vec![
        ("loss_cls", TermWeights { cls: Some(1.0), ..Default::default() }),
        ("loss_con", TermWeights { con: Some(1.0), ..Default::default() }),
        ("loss_fac", TermWeights { fac: Some(1.0), ..Default::default() }),
        ("loss_gaze", TermWeights { gaze: Some(1.0), ..Default::default() }),
        ("loss_prim", TermWeights { cls: None, con: Some(w.con), fac: Some(w.fac), gaze: Some(w.gaze) }),
    ]
}

struct Problem {
    model: CaugeModel,
    xs: Array4<f64>,
    xa: Array4<f64>,
    y: Array2<f64>,
}

fn problem(cfg: &GradcheckConfig) -> Result<Problem> {
    let net = NetConfig::tiny();
    let mut model = CaugeModel::new(&net, true, cfg.seed)?;
    // move G's zero-initialized output layer off zero so every path carries signal
    model.perturb(derive(cfg.seed, "perturb"), 0.2);
    let mut rng = rng_for(cfg.seed, &[tag("gradcheck-data")]);
    let s = net.image_size;
    let xs = Array4::from_shape_fn((cfg.batch, 3, s, s), |_| rng.gen_range(-1.0..1.0));
    let xa = Array4::from_shape_fn((cfg.batch, 3, s, s), |_| rng.gen_range(-1.0..1.0));
    let y = Array2::from_shape_fn((cfg.batch, 2), |_| rng.gen_range(-0.8..0.8));
    Ok(Problem { model, xs, xa, y })
}

fn derive(seed: u64, name: &str) -> u64 {
    crate::rng::derive_seed(seed, &[tag(name)])
}

/// Check every parameter of every network against every loss term.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let p = problem(cfg)?;
    let nets = CaugeModel::ALL;
    let mut per_net = vec![(0.0f64, 0usize); nets.len()];
    let mut components = Vec::new();
    let value = |m: &CaugeModel, w: TermWeights| -> Result<f64> {
        let b = Batch { xs: &p.xs, xa: Some(&p.xa), y: &p.y };
        Ok(evaluate(m, &b, w, ObjectiveOptions { feature_grads: false, input_grad: false })?.total)
    };
    for (name, weights) in loss_terms() {
        let out = evaluate(&p.model, &Batch { xs: &p.xs, xa: Some(&p.xa), y: &p.y }, weights, ObjectiveOptions::default())?;
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut model = p.model.clone();
        for (ni, &id) in nets.iter().enumerate() {
            let analytic = out.grads.get(id);
            for i in 0..analytic.len() {
                let orig = model.store(id).values()[i];
                model.store_mut(id).values_mut()[i] = orig + cfg.step;
                let up = value(&model, weights)?;
                model.store_mut(id).values_mut()[i] = orig - cfg.step;
                let down = value(&model, weights)?;
                model.store_mut(id).values_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * cfg.step);
                let e = rel_error(analytic[i], numeric);
                worst = worst.max(e);
                per_net[ni].0 = per_net[ni].0.max(e);
                per_net[ni].1 += 1;
                checked += 1;
            }
        }
        components.push(ComponentResult { component: name.to_string(), max_rel_error: worst, checked });
    }
    let mut all: Vec<ComponentResult> = nets
        .iter()
        .zip(&per_net)
        .map(|(id, &(e, n))| ComponentResult { component: id.to_string(), max_rel_error: e, checked: n })
        .collect();
    all.extend(components);
    Ok(GradcheckReport { step: cfg.step, tolerance: cfg.tolerance, components: all })
}

/// Finite-difference check of `dL/dx` on a few input pixels.
pub fn input_gradient_error(cfg: &GradcheckConfig, entries: usize) -> Result<f64> {
    let p = problem(cfg)?;
    let w = loss_terms().last().expect("prim term").1;
    let opts = ObjectiveOptions { feature_grads: true, input_grad: true };
    let out = evaluate(&p.model, &Batch { xs: &p.xs, xa: Some(&p.xa), y: &p.y }, w, opts)?;
    let dx = out.input_grad.expect("requested input gradient");
    let mut rng = rng_for(cfg.seed, &[tag("gradcheck-pixels")]);
    let dims = p.xs.dim();
    let mut worst = 0.0f64;
    for _ in 0..entries {
        let idx = (rng.gen_range(0..dims.0), rng.gen_range(0..dims.1), rng.gen_range(0..dims.2), rng.gen_range(0..dims.3));
        let mut xs = p.xs.clone();
        let f = |xs: &Array4<f64>| -> Result<f64> {
            let o = ObjectiveOptions { feature_grads: false, input_grad: false };
            Ok(evaluate(&p.model, &Batch { xs, xa: Some(&p.xa), y: &p.y }, w, o)?.total)
        };
        xs[idx] += cfg.step;
        let up = f(&xs)?;
        xs[idx] -= 2.0 * cfg.step;
        let down = f(&xs)?;
        worst = worst.max(rel_error(dx[idx], (up - down) / (2.0 * cfg.step)));
    }
    Ok(worst)
}
