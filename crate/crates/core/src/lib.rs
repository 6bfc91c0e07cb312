//! Gated autoencoders (GAE) and two-layer higher-order gated autoencoders
//! (HGAE) for modeling image sequences, together with the synthetic data,
//! whitening and evaluation machinery needed to train and assess them.
//!
//! Frames and mappings are columns of [`Matrix`] values; a batch of `n`
//! frames of dimension `d` is a `d × n` matrix.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod gae;
pub mod gradcheck;
pub mod hgae;
pub mod math;
pub mod params;
pub mod preprocess;
pub mod rng;
pub mod sequences;
pub mod training;

pub use error::{Error, Result};
pub use gae::GaeParams;
pub use hgae::{HgaeParams, Model};
pub use math::Matrix;
pub use params::ParamSet;
pub use rng::Rng;
pub use sequences::SequenceSet;
pub use training::{TrainConfig, TrainReport};
