//! Gradient-guided modality decoupling (GMD) with a dynamic-sharing (DS)
//! multimodal model, at desk scale.
//!
//! The pieces, bottom-up:
//!
//! - [`autodiff`]: `f64` tensors, parameter groups and reverse-mode gradients.
//! - [`cases`]: modality subsets and the per-iteration case sampler.
//! - [`gmd`]: conflict detection and mutual projection removal.
//! - [`ds_model`]: per-modality encoders, a shared backbone and mean fusion.
//! - [`synth_data`]: synthetic datasets with a tunable dominant modality, plus a CSV loader.
//! - [`trainer`]: the training loop, evaluation over every case, and run artifacts.
//! - [`diagnostics`]: norm statistics, angle histograms and weight traces from logged records.

pub mod autodiff;
pub mod cases;
pub mod diagnostics;
pub mod ds_model;
mod error;
pub mod gmd;
pub mod par;
pub mod synth_data;
pub mod trainer;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
