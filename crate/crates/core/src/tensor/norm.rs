use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{GradBuf, Op, Tape, Var};
use super::value::Tensor;

/// Per-channel statistics of one batch, variance biased (divisor = count).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

pub(crate) struct NormCache<S> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    batch: usize,
    channels: usize,
    inner: usize,
    /// Statistics were supplied, not computed from `x`.
    frozen: bool,
}

struct Layout {
    batch: usize,
    channels: usize,
    inner: usize,
}

impl<S: Scalar> Tape<S> {
    fn norm_layout(&self, x: Var, gamma: Var, beta: Var) -> Result<Layout> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xs = self.value(x).shape();
        if xs.len() < 2 {
            return Err(Error::shape("batch_norm", format!("input rank {} < 2", xs.len())));
        }
        let channels = xs[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [channels] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} {:?} for {channels} channels", self.value(v).shape()),
                ));
            }
        }
        let inner: usize = xs[2..].iter().product();
        if xs[0] * inner < 1 {
            return Err(Error::shape("batch_norm", "no values per channel (B·spatial < 1)"));
        }
        Ok(Layout { batch: xs[0], channels, inner })
    }

    /// Normalizes each channel of `x: [B, C, ...]` with the mean and biased
    /// variance of this batch over the batch and spatial axes, then applies
    /// `gamma · x̂ + beta`. Gradients flow through the batch statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<(Var, BatchStats<S>)> {
        let l = self.norm_layout(x, gamma, beta)?;
        let xd = self.value(x).data();
        let count = S::of((l.batch * l.inner) as f64);
        let mut mean = vec![S::zero(); l.channels];
        let mut var = vec![S::zero(); l.channels];
        for b in 0..l.batch {
            for c in 0..l.channels {
                let chunk = &xd[(b * l.channels + c) * l.inner..][..l.inner];
                mean[c] += chunk.iter().copied().sum();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..l.batch {
            for c in 0..l.channels {
                let chunk = &xd[(b * l.channels + c) * l.inner..][..l.inner];
                var[c] += chunk.iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let (value, cache) = self.normalize(x, gamma, beta, &l, &mean, &var, eps, false)?;
        let out = self.push("batch_norm", value, &[x, gamma, beta], Op::BatchNorm(cache))?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Normalizes with supplied statistics (inference with running estimates).
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BatchStats<S>,
        eps: S,
    ) -> Result<Var> {
        let l = self.norm_layout(x, gamma, beta)?;
        if stats.mean.len() != l.channels || stats.var.len() != l.channels {
            return Err(Error::shape("batch_norm", "running statistics do not match channel count"));
        }
        if stats.var.iter().any(|&v| v < S::zero()) {
            return Err(Error::domain("batch_norm", "negative running variance"));
        }
        let (value, cache) = self.normalize(x, gamma, beta, &l, &stats.mean, &stats.var, eps, true)?;
        self.push("batch_norm", value, &[x, gamma, beta], Op::BatchNorm(cache))
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        l: &Layout,
        mean: &[S],
        var: &[S],
        eps: S,
        frozen: bool,
    ) -> Result<(Tensor<S>, NormCache<S>)> {
        if eps <= S::zero() {
            return Err(Error::domain("batch_norm", "eps must be positive"));
        }
        let xt = self.value(x);
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xt.numel());
        let mut out = Vec::with_capacity(xt.numel());
        for (row, chunk) in xt.data().chunks(l.inner).enumerate() {
            let c = row % l.channels;
            let (m, s, g, b) = (mean[c], inv_std[c], gd[c], bd[c]);
            let start = xhat.len();
            xhat.extend(chunk.iter().map(|&v| (v - m) * s));
            out.extend(xhat[start..].iter().map(|&h| g * h + b));
        }
        let cache = NormCache {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch: l.batch,
            channels: l.channels,
            inner: l.inner,
            frozen,
        };
        Ok((Tensor::from_parts(xt.shape().to_vec(), out), cache))
    }
}

pub(super) fn batch_norm_backward<S: Scalar>(cache: &NormCache<S>, g: &[S], buf: &mut GradBuf<'_, S>) {
    let NormCache { x, gamma, beta, ref xhat, ref inv_std, batch, channels, inner, frozen } = *cache;
    let mut sum_dy = vec![S::zero(); channels];
    let mut sum_dy_xhat = vec![S::zero(); channels];
    for (row, (gc, hc)) in g.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
        let c = row % channels;
        for (&d, &h) in gc.iter().zip(hc) {
            sum_dy[c] += d;
            sum_dy_xhat[c] += d * h;
        }
    }
    if buf.wants(x) {
        let gd = buf.value(gamma).data();
        let count = S::of((batch * inner) as f64);
        let mut dx = Vec::with_capacity(g.len());
        for (row, (gc, hc)) in g.chunks(inner).zip(xhat.chunks(inner)).enumerate() {
            let c = row % channels;
            let scale = gd[c] * inv_std[c];
            if frozen {
                dx.extend(gc.iter().map(|&d| scale * d));
            } else {
                // dx = γ·σ⁻¹·(dy − mean(dy) − x̂·mean(dy·x̂))
                let (mean_dy, mean_dy_xhat) = (sum_dy[c] / count, sum_dy_xhat[c] / count);
                dx.extend(gc.iter().zip(hc).map(|(&d, &h)| scale * (d - mean_dy - h * mean_dy_xhat)));
            }
        }
        buf.add(x, dx);
    }
    if buf.wants(gamma) {
        buf.add(gamma, sum_dy_xhat);
    }
    if buf.wants(beta) {
        buf.add(beta, sum_dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>, c: usize) -> (Var, Var, Var) {
        let x = tape.leaf(Tensor::new(shape.to_vec(), data).unwrap(), true).unwrap();
        let g = tape.leaf(Tensor::full(&[c], 1.0), true).unwrap();
        let b = tape.leaf(Tensor::zeros(&[c]), true).unwrap();
        (x, g, b)
    }

    #[test]
    fn two_values_normalize_to_minus_one_plus_one() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, &[2, 1], vec![1.0, 3.0], 1);
        let (y, stats) = tape.batch_norm(x, g, b, 1e-12).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.var, vec![1.0]);
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_batch_maps_to_beta() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[4, 2, 3], 7.0), true).unwrap();
        let g = tape.leaf(Tensor::full(&[2], 2.0), true).unwrap();
        let b = tape.leaf(Tensor::from_f64(&[2], &[0.5, -0.25]).unwrap(), true).unwrap();
        let (y, _) = tape.batch_norm(x, g, b, 1e-5).unwrap();
        for (i, v) in tape.value(y).data().iter().enumerate() {
            let want = if (i / 3) % 2 == 0 { 0.5 } else { -0.25 };
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn single_element_channel_is_allowed_but_empty_is_not() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, &[1, 1], vec![4.0], 1);
        let (y, _) = tape.batch_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
        let (e, g2, b2) = setup(&mut tape, &[0, 1], vec![], 1);
        assert!(tape.batch_norm(e, g2, b2, 1e-5).is_err());
    }

    #[test]
    fn frozen_statistics_are_used_verbatim() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, &[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0], 1);
        let stats = BatchStats { mean: vec![1.0], var: vec![4.0 - 1e-5] };
        let y = tape.batch_norm_frozen(x, g, b, &stats, 1e-5).unwrap();
        let v = tape.value(y).data();
        for (o, i) in v.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((o - (i - 1.0) / 2.0).abs() < 1e-12);
        }
    }
}
