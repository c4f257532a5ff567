use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One subject's labeled trials, each a `C × T` array stored row-major.
/// Labels are 1-based class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    subject_id: u32,
    channels: usize,
    samples: usize,
    classes: usize,
    data: Vec<f64>,
    labels: Vec<u16>,
}

impl TrialSet {
    pub fn new(
        subject_id: u32,
        channels: usize,
        samples: usize,
        classes: usize,
        data: Vec<f64>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if channels == 0 || samples == 0 || classes == 0 {
            return Err(Error::Format(format!(
                "subject {subject_id}: C, T and N_c must be positive (got {channels}, {samples}, {classes})"
            )));
        }
        if labels.is_empty() {
            return Err(Error::Format(format!("subject {subject_id}: no trials")));
        }
        if classes > u16::MAX as usize {
            return Err(Error::Format(format!("{classes} classes exceed the label range")));
        }
        if data.len() != labels.len() * channels * samples {
            return Err(Error::Format(format!(
                "subject {subject_id}: {} values for {} trials of {channels}x{samples}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l as usize > classes) {
            return Err(Error::Label { label: bad as usize, classes });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("trials of subject {subject_id}") });
        }
        Ok(TrialSet { subject_id, channels, samples, classes, data, labels })
    }

    pub fn subject_id(&self) -> u32 {
        self.subject_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of trials (n).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trial(&self, i: usize) -> &[f64] {
        let size = self.channels * self.samples;
        &self.data[i * size..(i + 1) * size]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Stacks the listed trials into `[len, C, T]` with zero-based labels.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let size = self.channels * self.samples;
        let mut data = Vec::with_capacity(indices.len() * size);
        for &i in indices {
            data.extend(self.trial(i).iter().map(|&v| S::of(v)));
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize - 1).collect();
        (Tensor::from_parts(vec![indices.len(), self.channels, self.samples], data), labels)
    }

    /// Same labels, trials replaced elementwise by `f(trial)`.
    pub fn map_trials(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<TrialSet> {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.len() {
            let out = f(self.trial(i));
            if out.len() != self.channels * self.samples {
                return Err(Error::shape("map_trials", "mapped trial changed size"));
            }
            data.extend(out);
        }
        TrialSet::new(self.subject_id, self.channels, self.samples, self.classes, data, self.labels.clone())
    }

    /// Concatenates subjects with matching geometry into one set.
    pub fn pool(sets: &[Arc<TrialSet>], subject_id: u32) -> Result<TrialSet> {
        let first = sets.first().ok_or_else(|| Error::Format("nothing to pool".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for s in sets {
            if (s.channels, s.samples, s.classes) != (first.channels, first.samples, first.classes) {
                return Err(Error::shape("pool", format!("subject {} has a different geometry", s.subject_id)));
            }
            data.extend_from_slice(&s.data);
            labels.extend_from_slice(&s.labels);
        }
        TrialSet::new(subject_id, first.channels, first.samples, first.classes, data, labels)
    }
}

/// Leave-one-subject-out split: every subject except `test_index` becomes a
/// client; the held-out subject is the server test set. Trials are shared,
/// not copied.
pub fn loso_split(subjects: &[Arc<TrialSet>], test_index: usize) -> Result<(Vec<Arc<TrialSet>>, Arc<TrialSet>)> {
    if subjects.len() < 2 {
        return Err(Error::Config(format!("LOSO needs at least 2 subjects, got {}", subjects.len())));
    }
    let test = subjects
        .get(test_index)
        .cloned()
        .ok_or_else(|| Error::Config(format!("test subject index {test_index} out of range")))?;
    let clients = subjects
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test_index)
        .map(|(_, s)| Arc::clone(s))
        .collect();
    Ok((clients, test))
}
