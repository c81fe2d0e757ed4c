//! Causal domain generalization for appearance-based gaze estimation.
//!
//! The crate covers the whole experimental loop on synthetic data:
//! [`datagen`] renders eye images whose gaze geometry is separated from
//! nuisance factors, [`intervene`] simulates label-preserving interventions,
//! [`nets`] holds the feature extractor, attention gate, gaze predictor and
//! intervention classifier, [`losses`] and [`objective`] define the training
//! signal, [`trainer`] runs the adversarial optimization, and [`eval`]
//! measures cross-domain angular error, feature invariance and ablations.

pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod intervene;
pub mod losses;
pub mod nets;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

/// Version string written next to every run's outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
