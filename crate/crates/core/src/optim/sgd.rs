use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradSet, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// Heavy-ball SGD with L2 weight decay:
/// `g' = g + λw`, `v ← μv + g'`, `w ← w − ηv`.
///
/// Only trainable entries move; BN running statistics are left alone.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    config: SgdConfig,
    velocity: IndexMap<String, Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd { config, velocity: IndexMap::new() })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self, name: &str) -> Option<&[S]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &GradSet<S>) -> Result<()> {
        // validate everything before touching any parameter
        let mut trainable = 0;
        for (name, t) in params.trainable() {
            trainable += 1;
            let g = grads.get(name).ok_or_else(|| Error::MissingParam(format!("gradient for {name}")))?;
            if g.len() != t.numel() {
                return Err(Error::shape("sgd", format!("{name}: gradient has {} values, parameter {}", g.len(), t.numel())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("gradient of {name}") });
            }
        }
        if grads.len() != trainable {
            return Err(Error::shape("sgd", format!("{} gradients for {trainable} trainable parameters", grads.len())));
        }
        let lr = S::of(self.config.lr);
        let mu = S::of(self.config.momentum);
        let wd = S::of(self.config.weight_decay);
        for (name, entry) in params.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let g = grads.get(name).expect("checked above");
            let w = entry.tensor.data_mut();
            let v = self.velocity.entry(name.to_string()).or_insert_with(|| vec![S::zero(); w.len()]);
            for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + (g + wd * *w);
                *w -= lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamEntry;
    use crate::tensor::Tensor;
    use rand::Rng;

    pub(crate) fn scalar_params(w: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", ParamEntry { tensor: Tensor::scalar(w), is_bn: false, trainable: true }).unwrap();
        p
    }

    fn grad(g: f64) -> GradSet<f64> {
        let mut gs = GradSet::new();
        gs.insert("w", vec![g]);
        gs
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_params(1.0);
        let mut sgd = Sgd::new(SgdConfig { lr: 0.5, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        sgd.step(&mut p, &grad(2.0)).unwrap();
        assert_eq!(p.tensor("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn momentum_recurrence() {
        let mut p = scalar_params(0.0);
        let mut sgd = Sgd::new(SgdConfig { lr: 1e-9, momentum: 0.9, weight_decay: 0.0 }).unwrap();
        sgd.step(&mut p, &grad(2.0)).unwrap();
        assert_eq!(sgd.velocity("w").unwrap(), &[2.0]);
        sgd.step(&mut p, &grad(2.0)).unwrap();
        assert!((sgd.velocity("w").unwrap()[0] - 1.9 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn running_statistics_are_not_touched() {
        let mut p = scalar_params(1.0);
        p.insert("bn.running_var", ParamEntry { tensor: Tensor::scalar(3.0), is_bn: true, trainable: false }).unwrap();
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.5, weight_decay: 0.1 }).unwrap();
        sgd.step(&mut p, &grad(1.0)).unwrap();
        assert_eq!(p.tensor("bn.running_var").unwrap().data(), &[3.0]);
    }

    #[test]
    fn errors_leave_parameters_unchanged() {
        let mut p = scalar_params(1.0);
        let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 }).unwrap();
        assert!(matches!(sgd.step(&mut p, &grad(f64::NAN)), Err(Error::NonFinite { .. })));
        let mut wrong = GradSet::new();
        wrong.insert("w", vec![1.0, 2.0]);
        assert!(matches!(sgd.step(&mut p, &wrong), Err(Error::Shape { .. })));
        assert!(matches!(sgd.step(&mut p, &GradSet::new()), Err(Error::MissingParam(_))));
        assert_eq!(p.tensor("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SgdConfig { lr: 0.0, momentum: 0.0, weight_decay: 0.0 },
            SgdConfig { lr: 0.1, momentum: 1.0, weight_decay: 0.0 },
            SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: -1.0 },
        ] {
            assert!(Sgd::<f64>::new(cfg).is_err());
        }
    }

    #[test]
    fn random_trajectory_matches_reference_loop() {
        let mut rng = crate::rng::stream_rng(7, crate::rng::Stream::Synthetic, 0, 0);
        let cfg = SgdConfig { lr: 0.03, momentum: 0.9, weight_decay: 1e-4 };
        let init: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = ParamSet::new();
        p.insert("a", ParamEntry { tensor: Tensor::from_f64(&[2, 2], &init[..4]).unwrap(), is_bn: false, trainable: true })
            .unwrap();
        p.insert("b", ParamEntry { tensor: Tensor::from_f64(&[2], &init[4..]).unwrap(), is_bn: true, trainable: true })
            .unwrap();
        let mut sgd = Sgd::new(cfg).unwrap();
        let (mut w_ref, mut v_ref) = (init.clone(), vec![0.0; 6]);
        for _ in 0..50 {
            let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut gs = GradSet::new();
            gs.insert("a", g[..4].to_vec());
            gs.insert("b", g[4..].to_vec());
            sgd.step(&mut p, &gs).unwrap();
            for i in 0..6 {
                let gd = g[i] + 1e-4 * w_ref[i];
                v_ref[i] = 0.9 * v_ref[i] + gd;
                w_ref[i] -= 0.03 * v_ref[i];
            }
        }
        let got: Vec<f64> = p.iter().flat_map(|(_, e)| e.tensor.data().to_vec()).collect();
        for (a, b) in got.iter().zip(&w_ref) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
