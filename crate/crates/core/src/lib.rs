//! Reward-driven post-training for a frequency-controlled image restoration
//! operator.
//!
//! A small stochastic policy reads pooled statistics of a degraded image and
//! emits Beta distributions over four controls: the height and width of a
//! centered low-frequency mask, and two fusion gains. A toy spectral backbone
//! consumes those controls. Training samples a group of actions per input,
//! scores each restoration with a composite reward, and updates the policy
//! with a clipped group-relative objective while the backbone learns from
//! annealed supervised and consistency losses on a curated hard subset.
//!
//! Module map:
//!
//! - [`imgcore`]: image container, luminance, Sobel, PSNR/SSIM, 2-D FFT.
//! - [`rewards`]: generic quality blend, task-aware terms, final combination.
//! - [`judge`]: expert-judge prompt, verdict parsing, mock and HTTP judges.
//! - [`policy`]: feature pooling, Beta heads, sampling, log-prob, entropy.
//! - [`backbone`]: spectral restoration operator and its gradients.
//! - [`grpo`]: advantages, surrogate, KL, losses, Adam, training loop.
//! - [`data`]: synthetic corpora, degradations, image I/O, hard mining.
//! - [`config`]: flat run configuration with presets.

pub mod backbone;
pub mod config;
pub mod data;
pub mod error;
pub mod grpo;
pub mod imgcore;
pub mod judge;
pub mod policy;
pub mod rewards;
pub mod special;

pub use error::{Error, Result};
pub use imgcore::Image;
