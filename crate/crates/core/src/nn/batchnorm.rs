use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Tape, Tensor, Var};

/// Where a BN layer takes its normalization statistics from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Batch statistics while training, running estimates at inference.
    RunningStats,
    /// Statistics of the current batch, both while training and at inference.
    BatchSpecific,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub mode: BnMode,
    pub momentum: f64,
    pub eps: f64,
}

impl BnConfig {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(mode: BnMode) -> Self {
        BnConfig { mode, momentum: Self::DEFAULT_MOMENTUM, eps: Self::DEFAULT_EPS }
    }
}

/// Result of one BN application: the output and, when training, the batch
/// statistics to fold into the running estimates.
pub struct BnOutput<S> {
    pub out: Var,
    pub batch_stats: Option<BatchStats<S>>,
}

/// Applies batch normalization with affine parameters already on the tape.
///
/// `running` is only read in [`BnMode::RunningStats`] inference.
pub fn batchnorm_forward<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &BatchStats<S>,
    config: &BnConfig,
    training: bool,
) -> Result<BnOutput<S>> {
    let eps = S::of(config.eps);
    match (config.mode, training) {
        (BnMode::RunningStats, false) => {
            let out = tape.batch_norm_frozen(x, gamma, beta, running, eps)?;
            Ok(BnOutput { out, batch_stats: None })
        }
        (BnMode::BatchSpecific, false) => {
            let (out, _) = tape.batch_norm(x, gamma, beta, eps)?;
            Ok(BnOutput { out, batch_stats: None })
        }
        (_, true) => {
            let (out, stats) = tape.batch_norm(x, gamma, beta, eps)?;
            Ok(BnOutput { out, batch_stats: Some(stats) })
        }
    }
}

/// `running ← (1 − momentum)·running + momentum·batch`, elementwise.
pub fn update_running<S: Scalar>(
    running_mean: &mut [S],
    running_var: &mut [S],
    batch: &BatchStats<S>,
    momentum: f64,
) -> Result<()> {
    if running_mean.len() != batch.mean.len() || running_var.len() != batch.var.len() {
        return Err(Error::shape("batch_norm", "running statistics do not match batch statistics"));
    }
    let m = S::of(momentum);
    let keep = S::one() - m;
    for (r, &b) in running_mean.iter_mut().zip(&batch.mean) {
        *r = keep * *r + m * b;
    }
    for (r, &b) in running_var.iter_mut().zip(&batch.var) {
        *r = keep * *r + m * b;
    }
    Ok(())
}

/// Self-contained BN layer state, for use outside a full model.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub config: BnConfig,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize, mode: BnMode) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            config: BnConfig::new(mode),
        }
    }

    /// Registers γ and β as trainable leaves, normalizes `x`, and in training
    /// mode updates the running estimates. Returns `(out, gamma, beta)`.
    pub fn forward(&mut self, tape: &mut Tape<S>, x: Var, training: bool) -> Result<(Var, Var, Var)> {
        let gamma = tape.leaf(self.gamma.clone(), true)?;
        let beta = tape.leaf(self.beta.clone(), true)?;
        let running = BatchStats { mean: self.running_mean.clone(), var: self.running_var.clone() };
        let out = batchnorm_forward(tape, x, gamma, beta, &running, &self.config, training)?;
        if let Some(stats) = &out.batch_stats {
            update_running(&mut self.running_mean, &mut self.running_var, stats, self.config.momentum)?;
        }
        Ok((out.out, gamma, beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::{stream_rng, Stream};

    fn random_input(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut rng = stream_rng(seed, Stream::Synthetic, 0, 0);
        let n = shape.iter().product();
        let data = (0..n).map(|_| 3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn batch_specific_inference_leaves_running_buffers_untouched() {
        let mut bn = BatchNormState::<f64>::new(3, BnMode::BatchSpecific);
        bn.running_mean = vec![100.0, -100.0, 5.0];
        bn.running_var = vec![9.0, 16.0, 25.0];
        let before = bn.clone();
        let mut tape = Tape::new();
        let x = tape.constant(random_input(1, &[4, 3, 5])).unwrap();
        let (y, _, _) = bn.forward(&mut tape, x, false).unwrap();
        assert_eq!(bn, before);
        // output is normalized by the batch itself, so the absurd running mean is never used
        let v = tape.value(y).data();
        let ch0: f64 = (0..4).flat_map(|b| (0..5).map(move |i| (b, i))).map(|(b, i)| v[b * 15 + i]).sum();
        assert!(ch0.abs() < 1e-10);
    }

    #[test]
    fn running_stats_mode_uses_estimates_at_inference() {
        let mut bn = BatchNormState::<f64>::new(1, BnMode::RunningStats);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![4.0];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 5.0]).unwrap()).unwrap();
        let (y, _, _) = bn.forward(&mut tape, x, false).unwrap();
        let v = tape.value(y).data();
        assert!((v[0]).abs() < 1e-12);
        assert!((v[1] - 4.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn training_updates_running_estimates_with_momentum() {
        let mut bn = BatchNormState::<f64>::new(1, BnMode::RunningStats);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap()).unwrap();
        bn.forward(&mut tape, x, true).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalized_output_is_invariant_to_affine_input_change() {
        let x0 = random_input(3, &[6, 2, 4]);
        let mut shifted = x0.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v = 10.0 * *v + 5.0);
        let mut outs = Vec::new();
        for input in [x0, shifted] {
            let mut bn = BatchNormState::<f64>::new(2, BnMode::BatchSpecific);
            bn.config.eps = 1e-12;
            let mut tape = Tape::new();
            let x = tape.constant(input).unwrap();
            let (y, _, _) = bn.forward(&mut tape, x, true).unwrap();
            outs.push(tape.value(y).data().to_vec());
        }
        for (a, b) in outs[0].iter().zip(&outs[1]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pre_affine_moments_match_direct_recomputation() {
        for seed in 0..10 {
            let input = random_input(seed, &[5, 3, 7]);
            let mut bn = BatchNormState::<f64>::new(3, BnMode::BatchSpecific);
            let mut tape = Tape::new();
            let x = tape.constant(input.clone()).unwrap();
            let (y, _, _) = bn.forward(&mut tape, x, true).unwrap();
            let out = tape.value(y).data();
            for c in 0..3 {
                let idx: Vec<usize> = (0..5).flat_map(|b| (0..7).map(move |i| (b * 3 + c) * 7 + i)).collect();
                let n = idx.len() as f64;
                let mu = idx.iter().map(|&i| input.data()[i]).sum::<f64>() / n;
                let var = idx.iter().map(|&i| (input.data()[i] - mu).powi(2)).sum::<f64>() / n;
                let out_mean = idx.iter().map(|&i| out[i]).sum::<f64>() / n;
                let out_var = idx.iter().map(|&i| (out[i] - out_mean).powi(2)).sum::<f64>() / n;
                assert!(out_mean.abs() < 1e-10);
                assert!((out_var - var / (var + 1e-5)).abs() < 1e-10);
            }
        }
    }
}
