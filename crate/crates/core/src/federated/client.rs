use std::sync::Arc;

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::nn::{Model, ParamSet};
use crate::scalar::Scalar;

use super::config::{FederatedConfig, Strategy};
use super::local::{train_epoch, LocalOptimizer, LossTally, Proximal};

/// A client's private data and its local copy of the model. The data never
/// leaves this type; only parameters and scalar losses do.
#[derive(Clone, Debug)]
pub struct ClientState<S> {
    id: usize,
    data: Arc<TrialSet>,
    params: ParamSet<S>,
}

/// What a client sends back after local training.
#[derive(Clone, Debug)]
pub struct ClientUpdate<S> {
    pub client: usize,
    /// Full parameter set, BN entries included.
    pub params: ParamSet<S>,
    pub n_k: usize,
    /// Mean loss over the local steps of the round.
    pub mean_loss: f64,
    pub steps: usize,
}

impl<S: Scalar> ClientState<S> {
    pub fn new(id: usize, data: Arc<TrialSet>, initial: ParamSet<S>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config(format!("client {id} has no trials")));
        }
        Ok(ClientState { id, data, params: initial })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Local sample count n_k.
    pub fn n_k(&self) -> usize {
        self.data.len()
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    /// Loads the global model; strategies with local BN keep their own BN entries.
    pub fn receive(&mut self, global: &ParamSet<S>, strategy: Strategy) -> Result<()> {
        self.params.load_from(global, !strategy.local_bn())?;
        Ok(())
    }

    /// Local training for round `round` (1-based) on the already received
    /// model. The optimizer starts fresh every round.
    pub fn train(&mut self, model: &Model, cfg: &FederatedConfig, strategy: Strategy, round: usize) -> Result<ClientUpdate<S>> {
        let mut optimizer = LocalOptimizer::for_strategy(strategy, cfg)?;
        let anchor = strategy.proximal().then(|| self.params.clone());
        let proximal = anchor.as_ref().map(|anchor| Proximal { anchor, mu: cfg.mu_prox });
        let first_epoch = (round.saturating_sub(1) * cfg.local_epochs) as u64;
        let mut tally = LossTally::default();
        for e in 0..cfg.local_epochs {
            let t = train_epoch(
                model,
                &mut self.params,
                &self.data,
                cfg.batch_size,
                &mut optimizer,
                proximal.as_ref(),
                cfg.seed,
                self.id as u64,
                first_epoch + e as u64,
            )?;
            tally.sum += t.sum;
            tally.steps += t.steps;
        }
        Ok(ClientUpdate {
            client: self.id,
            params: self.params.clone(),
            n_k: self.n_k(),
            mean_loss: tally.mean(),
            steps: tally.steps,
        })
    }

    /// `receive` followed by `train`.
    pub fn update(
        &mut self,
        model: &Model,
        global: &ParamSet<S>,
        cfg: &FederatedConfig,
        strategy: Strategy,
        round: usize,
    ) -> Result<ClientUpdate<S>> {
        self.receive(global, strategy)?;
        self.train(model, cfg, strategy, round)
    }
}
