//! SGD with momentum and weight decay, and sharpness-aware minimization.

mod sam;
mod sgd;

pub use sam::{sam_perturbation, Sam, SamOutcome, SamPass};
pub use sgd::{Sgd, SgdConfig};
