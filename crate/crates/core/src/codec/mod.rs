//! A small frozen conditional codec: analysis/synthesis transforms,
//! temporal context extraction from the previous reconstruction, and a
//! context-conditioned Gaussian entropy head.

pub mod forward;
pub mod model;
pub mod pretrain;

pub use forward::{
    decode_frame, encode_frame, extract_context, predict_entropy_params, zero_context, Latent,
};
pub use model::{fnv1a64, ArchConfig, CodecModel};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};
