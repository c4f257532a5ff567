use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{BackboneSpec, Model, ParamSet};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

use super::aggregate::aggregate;
use super::client::{ClientState, ClientUpdate};
use super::config::{FederatedConfig, Strategy};

/// Metrics of one communication round (or one centralized epoch).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub m: usize,
    pub client_losses: Vec<f64>,
    /// Mean over every local step of the round.
    pub mean_train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub wall_time_secs: f64,
}

impl PartialEq for RoundRecord {
    /// Wall time is not part of the outcome.
    fn eq(&self, other: &Self) -> bool {
        self.round == other.round
            && self.selected == other.selected
            && self.m == other.m
            && self.client_losses.len() == other.client_losses.len()
            && self.client_losses.iter().zip(&other.client_losses).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.mean_train_loss.to_bits() == other.mean_train_loss.to_bits()
            && self.test_accuracy.map(f64::to_bits) == other.test_accuracy.map(f64::to_bits)
    }
}

/// Round records and the final global model.
#[derive(Clone, Debug)]
pub struct RunOutput<S> {
    pub records: Vec<RoundRecord>,
    pub params: ParamSet<S>,
    pub model: Model,
}

impl<S> RunOutput<S> {
    /// Accuracy of the last evaluated round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.test_accuracy)
    }
}

/// Uniformly samples `max(⌊P·K⌋, 1)` distinct client indices, sorted.
pub fn select_clients<R: Rng + ?Sized>(k: usize, participation: f64, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("no clients".into()));
    }
    let cfg = FederatedConfig { participation, ..FederatedConfig::default() };
    cfg.validate()?;
    let mut chosen = sample(rng, k, cfg.clients_per_round(k)).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Loads the global model into a client according to the strategy.
pub fn distribute<S: Scalar>(global: &ParamSet<S>, client: &mut ClientState<S>, strategy: Strategy) -> Result<()> {
    client.receive(global, strategy)
}

/// Seen by a probe for every selected client, around the distribute step.
pub struct DistributeEvent<'a, S> {
    pub round: usize,
    pub client: usize,
    pub before: &'a ParamSet<S>,
    pub after: &'a ParamSet<S>,
    pub global: &'a ParamSet<S>,
}

/// Server side of the federated protocol.
pub struct Server<S> {
    model: Model,
    strategy: Strategy,
    cfg: FederatedConfig,
    global: ParamSet<S>,
    clients: Vec<ClientState<S>>,
    test: Arc<TrialSet>,
    round: usize,
}

impl<S: Scalar> Server<S> {
    /// One global initialization; every client starts from a copy of it.
    pub fn new(
        spec: &BackboneSpec,
        strategy: Strategy,
        cfg: &FederatedConfig,
        clients: &[Arc<TrialSet>],
        test: Arc<TrialSet>,
    ) -> Result<Self> {
        if !strategy.is_federated() {
            return Err(Error::Config("centralized training has no server; use run_centralized".into()));
        }
        cfg.validate()?;
        if clients.is_empty() {
            return Err(Error::Config("no clients".into()));
        }
        let model = Model::new(spec.clone(), strategy.bn_mode())?;
        let global: ParamSet<S> = model.init_params(&mut stream_rng(cfg.seed, Stream::Init, 0, 0));
        let clients = clients
            .iter()
            .enumerate()
            .map(|(k, d)| ClientState::new(k, Arc::clone(d), global.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Server { model, strategy, cfg: cfg.clone(), global, clients, test, round: 0 })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn global(&self) -> &ParamSet<S> {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState<S>] {
        &self.clients
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn step(&mut self) -> Result<RoundRecord> {
        self.step_with(|_| {})
    }

    /// Runs one round: select, distribute, local updates, aggregate, evaluate.
    pub fn step_with(&mut self, mut probe: impl FnMut(DistributeEvent<'_, S>)) -> Result<RoundRecord> {
        let start = Instant::now();
        let t = self.round + 1;
        let selected =
            select_clients(self.clients.len(), self.cfg.participation, &mut stream_rng(self.cfg.seed, Stream::Selection, 0, t as u64))?;

        for &k in &selected {
            let before = self.clients[k].params().clone();
            distribute(&self.global, &mut self.clients[k], self.strategy)?;
            probe(DistributeEvent { round: t, client: k, before: &before, after: self.clients[k].params(), global: &self.global });
        }

        let (model, cfg, strategy) = (&self.model, &self.cfg, self.strategy);
        let updates: Vec<ClientUpdate<S>> = self
            .clients
            .par_iter_mut()
            .filter(|c| selected.binary_search(&c.id()).is_ok())
            .map(|c| c.train(model, cfg, strategy, t))
            .collect::<Result<_>>()?;

        let weighted: Vec<(&ParamSet<S>, usize)> = updates.iter().map(|u| (&u.params, u.n_k)).collect();
        self.global = aggregate(&weighted)?;
        self.round = t;

        let steps: usize = updates.iter().map(|u| u.steps).sum();
        let mean_train_loss = updates.iter().map(|u| u.mean_loss * u.steps as f64).sum::<f64>() / steps as f64;
        let test_accuracy = if self.cfg.evaluates_after(t) {
            Some(evaluate(&self.model, &self.global, &self.test, self.cfg.test_batch_size)?.value())
        } else {
            None
        };
        Ok(RoundRecord {
            round: t,
            m: selected.len(),
            client_losses: updates.iter().map(|u| u.mean_loss).collect(),
            selected,
            mean_train_loss,
            test_accuracy,
            wall_time_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn into_output(self, records: Vec<RoundRecord>) -> RunOutput<S> {
        RunOutput { records, params: self.global, model: self.model }
    }
}

/// `cfg.rounds` rounds of the federated protocol over the given clients,
/// evaluating the global model on the server's `test` set.
pub fn run_federated<S: Scalar>(
    spec: &BackboneSpec,
    strategy: Strategy,
    cfg: &FederatedConfig,
    clients: &[Arc<TrialSet>],
    test: Arc<TrialSet>,
) -> Result<RunOutput<S>> {
    let mut server = Server::new(spec, strategy, cfg, clients, test)?;
    let records = (0..cfg.rounds).map(|_| server.step()).collect::<Result<Vec<_>>>()?;
    Ok(server.into_output(records))
}
