use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::nn::{Model, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

fn batches(n: usize, batch_size: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("test batch size must be positive".into()));
    }
    Ok((0..n).step_by(batch_size).map(move |start| (start..(start + batch_size).min(n)).collect()))
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Classifies `test` in order, in batches of `batch_size` (the last batch may
/// be short). BN layers in batch-specific mode normalize each batch with its
/// own statistics.
pub fn evaluate<S: Scalar>(model: &Model, params: &ParamSet<S>, test: &TrialSet, batch_size: usize) -> Result<Accuracy> {
    let mut correct = 0;
    for idx in batches(test.len(), batch_size)? {
        let (x, labels) = test.batch::<S>(&idx);
        let (logits, _) = model.infer(params, &x)?;
        let classes = logits.shape()[1];
        for (row, &y) in logits.data().chunks(classes).zip(&labels) {
            correct += (argmax(row) == y) as usize;
        }
    }
    Ok(Accuracy { correct, total: test.len() })
}

/// Inputs of the final linear layer for every test trial, row-major
/// `n × dim`, with zero-based labels.
pub fn extract_features<S: Scalar>(
    model: &Model,
    params: &ParamSet<S>,
    test: &TrialSet,
    batch_size: usize,
) -> Result<(Vec<f64>, usize, Vec<usize>)> {
    let mut features = Vec::new();
    let mut all_labels = Vec::with_capacity(test.len());
    let mut dim = 0;
    for idx in batches(test.len(), batch_size)? {
        let (x, labels) = test.batch::<S>(&idx);
        let (_, f) = model.infer(params, &x)?;
        dim = f.numel() / idx.len();
        features.extend(f.data().iter().map(|v| v.as_f64()));
        all_labels.extend(labels);
    }
    Ok((features, dim, all_labels))
}
