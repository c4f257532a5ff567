//! Layers, parameter sets and backbone networks.

mod batchnorm;
mod model;
mod params;

pub use batchnorm::{batchnorm_forward, update_running, BatchNormState, BnConfig, BnMode, BnOutput};
pub use model::{BackboneKind, BackboneSpec, ForwardCtx, ForwardOutput, LossEval, Model};
pub use params::{GradSet, ParamEntry, ParamSet};
