//! Euclidean alignment and per-trial standardization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::TrialSet;
use crate::error::{Error, Result};

/// Relative eigenvalue floor: eigenvalues below `EIG_FLOOR · λ_max` are clamped.
pub const EIG_FLOOR: f64 = 1e-10;

/// A subject's mean spatial covariance `R` and its inverse square root.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReference {
    r: DMatrix<f64>,
    r_inv_sqrt: DMatrix<f64>,
    eig_floor: f64,
}

impl AlignmentReference {
    pub fn identity(channels: usize) -> Self {
        AlignmentReference {
            r: DMatrix::identity(channels, channels),
            r_inv_sqrt: DMatrix::identity(channels, channels),
            eig_floor: EIG_FLOOR,
        }
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.r_inv_sqrt
    }

    /// Absolute eigenvalue floor that was applied.
    pub fn eig_floor(&self) -> f64 {
        self.eig_floor
    }

    pub fn channels(&self) -> usize {
        self.r.nrows()
    }
}

fn trial_matrix(set: &TrialSet, i: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(set.channels(), set.samples(), set.trial(i))
}

/// `(1/n) Σ X_i X_iᵀ`.
pub fn mean_covariance(set: &TrialSet) -> DMatrix<f64> {
    let c = set.channels();
    let mut r = DMatrix::zeros(c, c);
    for i in 0..set.len() {
        let x = trial_matrix(set, i);
        r.gemm(1.0, &x, &x.transpose(), 1.0);
    }
    r / set.len() as f64
}

pub fn compute_reference(set: &TrialSet) -> Result<AlignmentReference> {
    let mut r = mean_covariance(set);
    // exact symmetry before the eigensolver
    r = (&r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(r.clone());
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::Degenerate(format!("subject {}: trials are all zero", set.subject_id())));
    }
    let floor = EIG_FLOOR * max;
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor).sqrt()),
    );
    let v = &eig.eigenvectors;
    let r_inv_sqrt = v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose();
    Ok(AlignmentReference { r, r_inv_sqrt, eig_floor: floor })
}

/// `X̃_i = R^{−1/2} X_i` for every trial; labels are unchanged.
pub fn align(set: &TrialSet, reference: &AlignmentReference) -> Result<TrialSet> {
    if reference.channels() != set.channels() {
        return Err(Error::shape(
            "align",
            format!("reference has {} channels, trials {}", reference.channels(), set.channels()),
        ));
    }
    let (c, t) = (set.channels(), set.samples());
    set.map_trials(|trial| {
        let x = DMatrix::from_row_slice(c, t, trial);
        let y = &reference.r_inv_sqrt * x;
        // back to row-major
        y.transpose().as_slice().to_vec()
    })
}

/// Aligns each subject with its own reference.
pub fn align_each(subjects: &[TrialSet]) -> Result<Vec<TrialSet>> {
    subjects.iter().map(|s| align(s, &compute_reference(s)?)).collect()
}

/// Standardizes every channel of every trial to zero mean and unit variance.
/// Constant channels are only centered.
pub fn standardize_trials(set: &TrialSet) -> Result<TrialSet> {
    let t = set.samples();
    set.map_trials(|trial| {
        let mut out = trial.to_vec();
        for row in out.chunks_mut(t) {
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            row.iter_mut().for_each(|v| *v = (*v - mean) * scale);
        }
        out
    })
}
