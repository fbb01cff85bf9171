//! Key-step concept unlearning on a desk-scale conditional diffusion model.
//!
//! The crate trains a small classifier-free-guided denoiser over a labeled
//! 2-D Gaussian mixture, then erases one or more concepts from it by
//! fine-tuning only at the sampler steps listed in a key-step table.
//!
//! Module map:
//! - [`schedule`]: linear noise schedule, forward noising, deterministic DDIM step
//! - [`condmodel`]: token-conditioned MLP noise predictor with hand-written backprop and Adam
//! - [`basetrain`]: mixture dataset, base training with condition dropout, guided sampling
//! - [`keystep`]: key-step table generation and per-task presets
//! - [`augment`]: alias templates, token perturbation, embedding jitter
//! - [`unlearn`]: unlearning/regularization/replacement losses and the fine-tuning loop
//! - [`spectra`]: frequency-domain SNR analysis of the forward diffusion
//! - [`evalmetrics`]: mode classifier, unlearn accuracy, retain accuracy, MMD
//! - [`config`] and [`cli`]: experiment configuration and subcommand drivers

pub mod augment;
pub mod basetrain;
pub mod cli;
pub mod condmodel;
pub mod config;
pub mod error;
pub mod evalmetrics;
pub mod keystep;
pub mod rng;
pub mod schedule;
pub mod spectra;
pub mod unlearn;

pub use error::{Error, Result};

/// A planar point; the data and output dimension of the toy model.
pub type Point = [f64; 2];
