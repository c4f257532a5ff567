//! Federated training of EEG motor-imagery classifiers with local batch-specific
//! batch normalization and sharpness-aware minimization (FedBS), together with
//! centralized, FedAvg and FedProx baselines.
//!
//! The numeric core ([`tensor`], [`nn`], [`optim`], [`federated`]) is generic over
//! the floating-point type through [`Scalar`]; the aliases below pin the common
//! instantiations. Trial data, alignment and statistics work in `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod federated;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type ParamSet64 = nn::ParamSet<f64>;
pub type ParamSet32 = nn::ParamSet<f32>;
pub type ClientState64 = federated::ClientState<f64>;
pub type ClientState32 = federated::ClientState<f32>;
