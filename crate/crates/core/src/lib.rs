//! Contrastive predictive coding for multichannel sensor time-series:
//! data preparation, encoders, self-supervised pre-training, frozen-feature
//! activity classification and the evaluation sweeps around them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases at
//! the bottom of this file name the common instantiations.

pub mod autograd;
pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod cpc;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Matrix;

/// Random source used throughout; seeded per run and per stream.
pub type Rng = rand_chacha::ChaCha8Rng;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type CpcModel32 = cpc::CpcModel<f32>;
pub type CpcModel64 = cpc::CpcModel<f64>;
pub type ClassifierModel32 = classifier::ClassifierModel<f32>;
pub type ClassifierModel64 = classifier::ClassifierModel<f64>;
