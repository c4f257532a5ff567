use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

/// `Σ (n_k/Σn)·w_k` over every entry, BN entries included. Terms are summed
/// in sorted order so the result does not depend on the input order.
pub fn aggregate<S: Scalar>(models: &[(&ParamSet<S>, usize)]) -> Result<ParamSet<S>> {
    let (first, _) = models.first().ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    if let Some((_, _)) = models.iter().find(|(p, _)| !p.same_layout(first)) {
        return Err(Error::shape("aggregate", "client parameter sets differ in names, tags or shapes"));
    }
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Degenerate("aggregation weights sum to zero".into()));
    }
    let weights: Vec<S> = models.iter().map(|(_, n)| S::of(*n as f64 / total as f64)).collect();
    let mut out = (*first).clone();
    let mut terms = vec![S::zero(); models.len()];
    for (name, entry) in out.iter_mut() {
        let sources: Vec<&[S]> = models.iter().map(|(p, _)| p.get(name).expect("same layout").tensor.data()).collect();
        for (i, v) in entry.tensor.data_mut().iter_mut().enumerate() {
            for (t, (src, &w)) in terms.iter_mut().zip(sources.iter().zip(&weights)) {
                *t = w * src[i];
            }
            terms.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite parameters"));
            *v = terms.iter().fold(S::zero(), |acc, &t| acc + t);
        }
    }
    if out.iter().any(|(_, e)| e.tensor.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { context: "aggregated parameters".into() });
    }
    Ok(out)
}
