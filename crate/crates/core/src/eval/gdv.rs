use crate::error::{Error, Result};

/// Generalized discrimination value of `n × dim` row-major features.
///
/// Each dimension is z-scored and halved, then
/// `GDV = (mean intra-class distance − mean inter-class distance) / √dim`
/// with Manhattan distances. Intra-class means are averaged over classes and
/// inter-class means over class pairs. Lower is more separable. The value is
/// not clamped.
pub fn gdv(features: &[f64], dim: usize, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if dim == 0 || features.len() != n * dim {
        return Err(Error::shape("gdv", format!("{} values for {n} points of dimension {dim}", features.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "GDV features".into() });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> =
        classes.iter().map(|&c| (0..n).filter(|&i| labels[i] == c).collect()).collect();
    if classes.len() < 2 || members.iter().any(|m| m.len() < 2) {
        return Err(Error::Degenerate("GDV needs at least 2 classes with at least 2 points each".into()));
    }

    let mut scaled = features.to_vec();
    for d in 0..dim {
        let mean = (0..n).map(|i| features[i * dim + d]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (features[i * dim + d] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let v = &mut scaled[i * dim + d];
            // a constant dimension carries no information
            *v = if sd > 0.0 { 0.5 * (*v - mean) / sd } else { 0.0 };
        }
    }
    let point = |i: usize| &scaled[i * dim..(i + 1) * dim];
    let dist = |i: usize, j: usize| point(i).iter().zip(point(j)).map(|(a, b)| (a - b).abs()).sum::<f64>();

    let mut intra = 0.0;
    for m in &members {
        let mut sum = 0.0;
        for (a, &i) in m.iter().enumerate() {
            for &j in &m[a + 1..] {
                sum += dist(i, j);
            }
        }
        intra += sum / (m.len() * (m.len() - 1) / 2) as f64;
    }
    intra /= members.len() as f64;

    let mut inter = 0.0;
    let mut pairs = 0usize;
    for (a, ma) in members.iter().enumerate() {
        for mb in &members[a + 1..] {
            let sum: f64 = ma.iter().flat_map(|&i| mb.iter().map(move |&j| (i, j))).map(|(i, j)| dist(i, j)).sum();
            inter += sum / (ma.len() * mb.len()) as f64;
            pairs += 1;
        }
    }
    inter /= pairs as f64;
    Ok((intra - inter) / (dim as f64).sqrt())
}
