//! Model-inversion attack and defense lab.
//!
//! A small reverse-mode autodiff engine drives dense classifiers whose
//! classification head can be swapped for a low-rank factorization. On top
//! of that sit the training-time defenses (confidence adaptation, label
//! smoothing, variational bottleneck, HSIC bottleneck, partial freezing),
//! white-box attacks (input-space inversion, FGSM, PGD) and the metrics
//! used to compare them.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod attack;
pub mod autodiff;
pub mod data;
pub mod defense;
mod error;
pub mod metrics;
pub mod nn;
mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Classifier = nn::ClassifierModel<f64>;
pub type Classifier32 = nn::ClassifierModel<f32>;
pub type Autoencoder = nn::AutoencoderModel<f64>;
pub type Dataset = data::LabeledDataset<f64>;
pub type Dataset32 = data::LabeledDataset<f32>;
pub type EvalModel64 = metrics::EvalModel<f64>;
