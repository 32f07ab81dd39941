//! Desk-scale data poisoning research toolkit.
//!
//! The crate provides, on top of a minimal differentiable network core:
//!
//! - sharpness machinery: worst-case parameter perturbations, one-step and
//!   multi-step sharpness estimates, sharpness-aware objective gradients,
//!   and loss-landscape grid probing;
//! - targeted and backdoor poisoning by gradient matching, with poison
//!   re-initialization and surrogate model restarts; setting the sharpness
//!   radius to zero recovers the plain gradient-matching baselines bitwise;
//! - unlearnable-example generation (error-minimizing and error-maximizing
//!   perturbations), again with an optional sharpness-aware gradient;
//! - a fully seeded retraining harness with step/cyclic schedules, mixup
//!   and cutout augmentation, and a sharpness-aware optimizer variant;
//! - experiment orchestration (craft, retrain from scratch, evaluate) with
//!   deterministic per-trial seed derivation and file-based artifacts.
//!
//! Everything is f64, seeded, and bitwise reproducible: a saved experiment
//! manifest determines every metric byte.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradmatch;
pub mod landscape;
pub mod nn;
pub mod persist;
pub mod rng;
pub mod sharpness;
pub mod tensor;
pub mod training;
pub mod unlearnable;

pub use error::{Error, Result};
pub use nn::{LabeledBatch, LayerKind, ModelParams, ModelSpec};
pub use tensor::Tensor;
