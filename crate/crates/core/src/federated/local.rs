//! Epoch loop shared by federated clients and the centralized runner.

use rand::seq::SliceRandom;

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, GradSet, Model, ParamSet};
use crate::optim::{Sam, SamPass, Sgd};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

use super::config::{FederatedConfig, Strategy};

pub(crate) enum LocalOptimizer<S> {
    Sgd(Sgd<S>),
    Sam(Sam<S>),
}

impl<S: Scalar> LocalOptimizer<S> {
    pub(crate) fn for_strategy(strategy: Strategy, cfg: &FederatedConfig) -> Result<Self> {
        Ok(if strategy.uses_sam() {
            LocalOptimizer::Sam(Sam::new(cfg.rho, cfg.sgd())?)
        } else {
            LocalOptimizer::Sgd(Sgd::new(cfg.sgd())?)
        })
    }
}

/// FedProx anchor: the global weights received at the start of the round.
pub(crate) struct Proximal<'a, S> {
    pub anchor: &'a ParamSet<S>,
    pub mu: f64,
}

impl<S: Scalar> Proximal<'_, S> {
    /// Adds `(μ/2)‖w − w_g‖²` to the loss and `μ(w − w_g)` to the gradients.
    fn apply(&self, params: &ParamSet<S>, loss: S, grads: &mut GradSet<S>) -> Result<S> {
        let mu = S::of(self.mu);
        for (name, w) in params.trainable() {
            let anchor = self.anchor.tensor(name)?;
            let g = grads.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
            for ((g, &w), &a) in g.iter_mut().zip(w.data()).zip(anchor.data()) {
                *g += mu * (w - a);
            }
        }
        Ok(loss + S::of(0.5 * self.mu) * params.trainable_sq_distance(self.anchor)?)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct LossTally {
    pub sum: f64,
    pub steps: usize,
}

impl LossTally {
    pub fn mean(&self) -> f64 {
        if self.steps == 0 {
            f64::NAN
        } else {
            self.sum / self.steps as f64
        }
    }
}

/// One pass over `data` in shuffled batches (last short batch kept).
/// Shuffling and dropout draw from streams keyed by `(owner, epoch)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_epoch<S: Scalar>(
    model: &Model,
    params: &mut ParamSet<S>,
    data: &TrialSet,
    batch_size: usize,
    optimizer: &mut LocalOptimizer<S>,
    proximal: Option<&Proximal<'_, S>>,
    seed: u64,
    owner: u64,
    epoch: u64,
) -> Result<LossTally> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, owner, epoch));
    let mut dropout_rng = stream_rng(seed, Stream::Dropout, owner, epoch);
    let mut tally = LossTally::default();

    for idx in order.chunks(batch_size) {
        let (x, labels) = data.batch::<S>(idx);
        let loss = match optimizer {
            LocalOptimizer::Sgd(sgd) => {
                let eval = model.loss_and_grad(params, &x, &labels, &mut ForwardCtx::train(&mut dropout_rng))?;
                let mut grads = eval.grads;
                let loss = match proximal {
                    Some(p) => p.apply(params, eval.loss, &mut grads)?,
                    None => eval.loss,
                };
                if !loss.is_finite() {
                    return Err(non_finite(owner, epoch, tally.steps));
                }
                sgd.step(params, &grads)?;
                model.apply_bn_stats(params, &eval.bn_stats)?;
                loss
            }
            LocalOptimizer::Sam(sam) => {
                let mut masks = None;
                let mut first_stats = None;
                let outcome = sam
                    .step(params, |p, pass| {
                        let eval = match pass {
                            SamPass::Ascent => {
                                let mut ctx = ForwardCtx::train(&mut dropout_rng);
                                let eval = model.loss_and_grad(p, &x, &labels, &mut ctx)?;
                                masks = Some(ctx.into_masks());
                                first_stats = Some(eval.bn_stats);
                                (eval.loss, eval.grads)
                            }
                            SamPass::Descent => {
                                let mut ctx = ForwardCtx::replay(masks.take().unwrap_or_default());
                                let eval = model.loss_and_grad(p, &x, &labels, &mut ctx)?;
                                (eval.loss, eval.grads)
                            }
                        };
                        let (loss, mut grads) = eval;
                        let loss = match proximal {
                            Some(prox) => prox.apply(p, loss, &mut grads)?,
                            None => loss,
                        };
                        Ok((loss, grads))
                    })
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => non_finite(owner, epoch, tally.steps),
                        other => other,
                    })?;
                // running statistics follow the unperturbed pass only
                if let Some(stats) = first_stats {
                    model.apply_bn_stats(params, &stats)?;
                }
                outcome.loss
            }
        };
        tally.sum += loss.as_f64();
        tally.steps += 1;
    }
    Ok(tally)
}

fn non_finite(owner: u64, epoch: u64, step: usize) -> Error {
    Error::NonFinite { context: format!("training loss of client {owner}, epoch {epoch}, step {step}") }
}
