//! Desk-scale neural video compression laboratory.
//!
//! The crate provides a small frozen conditional codec with a real range
//! coder, encoder-side online latent refinement with stochastic Gumbel
//! annealing quantization, frame-level dynamic rate–distortion control,
//! GOP orchestration, and an evaluation harness (PSNR, bpp, BD-rate,
//! fluctuation curves).

pub mod autodiff;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod quant;
pub mod rd;
pub mod refine;
pub mod rng;
pub mod video;

pub use error::{Error, Result};
