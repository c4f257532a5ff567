use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{GradBuf, Op, Tape, Var};
use super::value::Tensor;

pub(crate) struct CeCache<S> {
    logits: Var,
    labels: Vec<usize>,
    probs: Vec<S>,
}

impl<S: Scalar> Tape<S> {
    /// Mean over the batch of `-log softmax(logits)[label]`.
    ///
    /// `logits: [B, N]`, `labels` are zero-based class indices `< N`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let shape = self.value(logits).shape();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {shape:?} for {} labels", labels.len()),
            ));
        }
        let (batch, classes) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label: bad + 1, classes });
        }
        let data = self.value(logits).data();
        let mut probs = vec![S::zero(); batch * classes];
        let mut total = S::zero();
        for (b, &label) in labels.iter().enumerate() {
            let row = &data[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let sum_exp: S = row.iter().map(|&z| (z - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            total += log_norm - row[label];
            for (p, &z) in probs[b * classes..(b + 1) * classes].iter_mut().zip(row) {
                *p = (z - log_norm).exp();
            }
        }
        let loss = total / S::of(batch as f64);
        let cache = CeCache { logits, labels: labels.to_vec(), probs };
        self.push("softmax_cross_entropy", Tensor::scalar(loss), &[logits], Op::SoftmaxCrossEntropy(cache))
    }
}

pub(super) fn cross_entropy_backward<S: Scalar>(cache: &CeCache<S>, g: &[S], buf: &mut GradBuf<'_, S>) {
    if !buf.wants(cache.logits) {
        return;
    }
    let batch = cache.labels.len();
    let classes = cache.probs.len() / batch;
    let scale = g[0] / S::of(batch as f64);
    let mut d: Vec<S> = cache.probs.iter().map(|&p| p * scale).collect();
    for (b, &label) in cache.labels.iter().enumerate() {
        d[b * classes + label] -= scale;
    }
    buf.add(cache.logits, d);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_n() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[3, 4]), true).unwrap();
        let l = tape.softmax_cross_entropy(z, &[0, 1, 3]).unwrap();
        assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dominant_logit_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0, 1000.0] {
            let mut tape = Tape::new();
            let z = tape.leaf(Tensor::from_f64(&[1, 3], &[margin, 0.0, 0.0]).unwrap(), true).unwrap();
            let loss = tape.softmax_cross_entropy(z, &[0]).unwrap();
            let l = tape.value(loss).item().unwrap();
            assert!(l <= prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-300);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[1, 2]), true).unwrap();
        assert!(matches!(tape.softmax_cross_entropy(z, &[2]), Err(Error::Label { .. })));
    }
}
