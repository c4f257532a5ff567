use std::sync::Arc;
use std::time::Instant;

use crate::data::TrialSet;
use crate::error::Result;
use crate::eval::evaluate;
use crate::nn::{BackboneSpec, Model, ParamSet};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

use super::config::{FederatedConfig, Strategy};
use super::local::{train_epoch, LocalOptimizer};
use super::server::{RoundRecord, RunOutput};

/// Plain SGD on the pooled data for `cfg.rounds` epochs, one record per
/// epoch, with running-statistics BN. A single optimizer persists over the
/// whole run. Batching draws from the same streams as client 0, so a lone
/// client that keeps the whole pool reproduces this trajectory.
pub fn run_centralized<S: Scalar>(
    spec: &BackboneSpec,
    cfg: &FederatedConfig,
    pooled: Arc<TrialSet>,
    test: &TrialSet,
) -> Result<RunOutput<S>> {
    cfg.validate()?;
    let strategy = Strategy::Centralized;
    let model = Model::new(spec.clone(), strategy.bn_mode())?;
    let mut params: ParamSet<S> = model.init_params(&mut stream_rng(cfg.seed, Stream::Init, 0, 0));
    let mut optimizer = LocalOptimizer::for_strategy(strategy, cfg)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for epoch in 0..cfg.rounds {
        let start = Instant::now();
        let tally =
            train_epoch(&model, &mut params, &pooled, cfg.batch_size, &mut optimizer, None, cfg.seed, 0, epoch as u64)?;
        let round = epoch + 1;
        let test_accuracy = if cfg.evaluates_after(round) {
            Some(evaluate(&model, &params, test, cfg.test_batch_size)?.value())
        } else {
            None
        };
        records.push(RoundRecord {
            round,
            selected: vec![0],
            m: 1,
            client_losses: vec![tally.mean()],
            mean_train_loss: tally.mean(),
            test_accuracy,
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(RunOutput { records, params, model })
}
