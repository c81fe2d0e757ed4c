//! Adam over a fixed set of networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{CaugeModel, NetId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment buffers for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub net: NetId,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam optimizer that owns the moment state for a set of networks and only
/// ever writes to their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub states: Vec<MomentState>,
}

impl Adam {
    pub fn new(config: AdamConfig, model: &CaugeModel, nets: &[NetId]) -> Self {
        let states = nets
            .iter()
            .map(|&net| {
                let n = model.store(net).len();
                MomentState { net, m: vec![0.0; n], v: vec![0.0; n] }
            })
            .collect();
        Adam { config, step: 0, states }
    }

    pub fn nets(&self) -> Vec<NetId> {
        self.states.iter().map(|s| s.net).collect()
    }

    /// Fails if the two optimizers share any network.
    pub fn assert_disjoint(a: &Adam, b: &Adam) -> Result<()> {
        for n in a.nets() {
            if b.nets().contains(&n) {
                return Err(Error::Config(format!("network {n} owned by both optimizers")));
            }
        }
        Ok(())
    }

    /// One update using `grads(net)` for each owned network.
    pub fn update<'g>(&mut self, model: &mut CaugeModel, grads: impl Fn(NetId) -> &'g [f64]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for state in &mut self.states {
            let g = grads(state.net);
            let params = model.store_mut(state.net).values_mut();
            assert_eq!(g.len(), params.len(), "gradient length for {}", state.net);
            for i in 0..params.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                params[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
