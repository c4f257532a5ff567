use crate::error::{Error, Result};
use crate::nn::{GradSet, ParamSet};
use crate::scalar::Scalar;

use super::sgd::{Sgd, SgdConfig};

/// Which of the two gradient evaluations of a SAM step is being requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamPass {
    /// Gradient at the current weights.
    Ascent,
    /// Gradient at the perturbed weights `w + ε*`.
    Descent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamOutcome<S> {
    /// Loss of the first (unperturbed) pass.
    pub loss: S,
    /// `‖ε*‖₂`; zero when the perturbation was skipped.
    pub perturbation_norm: S,
}

/// `ε* = ρ·g/‖g‖₂` with the global norm over all entries, or `None` when
/// `ρ = 0` or the gradient vanishes.
pub fn sam_perturbation<S: Scalar>(grads: &GradSet<S>, rho: f64) -> Option<GradSet<S>> {
    let norm = grads.global_norm();
    if rho == 0.0 || norm == S::zero() {
        return None;
    }
    let scale = S::of(rho) / norm;
    let mut eps = GradSet::new();
    for (name, g) in grads.iter() {
        eps.insert(name, g.iter().map(|&v| v * scale).collect());
    }
    Some(eps)
}

/// Sharpness-aware minimization around an inner [`Sgd`].
#[derive(Clone, Debug)]
pub struct Sam<S> {
    rho: f64,
    inner: Sgd<S>,
}

impl<S: Scalar> Sam<S> {
    pub fn new(rho: f64, config: SgdConfig) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("SAM radius {rho} must be non-negative")));
        }
        Ok(Sam { rho, inner: Sgd::new(config)? })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn inner(&self) -> &Sgd<S> {
        &self.inner
    }

    /// One SAM update. `objective` returns the loss and the gradient of every
    /// trainable entry at the weights it is given; it is called once with
    /// [`SamPass::Ascent`] and, unless the perturbation is skipped, once more
    /// with [`SamPass::Descent`] at `w + ε*`. The weights are restored exactly
    /// before the descent step, which uses the second gradient.
    pub fn step<F>(&mut self, params: &mut ParamSet<S>, mut objective: F) -> Result<SamOutcome<S>>
    where
        F: FnMut(&ParamSet<S>, SamPass) -> Result<(S, GradSet<S>)>,
    {
        let (loss, g1) = objective(params, SamPass::Ascent)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: "SAM first-pass loss".into() });
        }
        let Some(eps) = sam_perturbation(&g1, self.rho) else {
            self.inner.step(params, &g1)?;
            return Ok(SamOutcome { loss, perturbation_norm: S::zero() });
        };
        let snapshot: Vec<(String, Vec<S>)> =
            params.trainable().map(|(n, t)| (n.to_string(), t.data().to_vec())).collect();
        for (name, e) in eps.iter() {
            let w = params.tensor_mut(name)?;
            if w.numel() != e.len() {
                return Err(Error::shape("sam", format!("{name}: gradient does not match parameter")));
            }
            w.data_mut().iter_mut().zip(e).for_each(|(w, &e)| *w += e);
        }
        let second = objective(params, SamPass::Descent);
        for (name, data) in &snapshot {
            params.tensor_mut(name)?.data_mut().copy_from_slice(data);
        }
        let (loss2, g2) = second?;
        if !loss2.is_finite() {
            return Err(Error::NonFinite { context: "SAM perturbed-pass loss".into() });
        }
        self.inner.step(params, &g2)?;
        Ok(SamOutcome { loss, perturbation_norm: eps.global_norm() })
    }
}
