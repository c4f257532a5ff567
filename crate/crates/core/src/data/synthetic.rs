use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, SimRng, Stream};

use super::trials::TrialSet;

/// Sampling rate assumed by the generator, in Hz.
pub const SAMPLE_RATE: f64 = 128.0;

/// Signal-to-noise ratio of the default benchmark.
pub const BENCHMARK_SNR: f64 = 0.3;

/// Sinusoidal components per class source.
pub const SOURCE_COMPONENTS: usize = 3;

/// Source frequency band in Hz.
pub const SOURCE_BAND: (f64, f64) = (8.0, 13.0);

/// Largest per-trial phase offset of the class source, in radians.
pub const PHASE_JITTER: f64 = 0.5;

/// Multi-subject synthetic EEG with a controllable subject shift. The default
/// is the six-subject benchmark used for the strategy comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    /// Signal-to-noise power ratio (linear); infinite means noiseless.
    pub snr: f64,
    /// Scale of the per-subject mixing, gain, offset and drift perturbations.
    pub shift_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subjects: 6,
            trials_per_subject: 200,
            channels: 8,
            samples: 128,
            classes: 2,
            snr: BENCHMARK_SNR,
            shift_strength: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("subjects", self.subjects),
            ("trials_per_subject", self.trials_per_subject),
            ("channels", self.channels),
            ("samples", self.samples),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic {name} must be positive")));
        }
        if !(self.snr > 0.0) {
            return Err(Error::Config(format!("synthetic snr {} must be positive", self.snr)));
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return Err(Error::Config(format!("shift_strength {} must be non-negative", self.shift_strength)));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Class source: a sum of sinusoids `(frequency in Hz, phase)`.
struct Source(Vec<(f64, f64)>);

impl Source {
    fn draw(rng: &mut SimRng) -> Self {
        Source(
            (0..SOURCE_COMPONENTS)
                .map(|_| (rng.gen_range(SOURCE_BAND.0..SOURCE_BAND.1), rng.gen_range(0.0..2.0 * PI)))
                .collect(),
        )
    }

    /// Unit-power-per-component waveform shifted in phase by `delta`.
    fn render(&self, delta: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|s| *s = 0.0);
        let norm = (self.0.len() as f64).sqrt();
        for &(f, phase) in &self.0 {
            let (omega, phase) = (2.0 * PI * f / SAMPLE_RATE, phase + delta);
            for (i, s) in out.iter_mut().enumerate() {
                *s += (omega * i as f64 + phase).sin() / norm;
            }
        }
    }
}

/// Per-subject distortion `x ↦ diag(gain·e^{u·drift_gain})·M·x + offset + u·drift_offset`
/// where `u` runs linearly from −1 to 1 over the session.
struct SubjectShift {
    mixing: Vec<f64>,
    gain: Vec<f64>,
    offset: Vec<f64>,
    drift_gain: Vec<f64>,
    drift_offset: Vec<f64>,
}

impl SubjectShift {
    fn draw(c: usize, strength: f64, rng: &mut SimRng) -> Self {
        let scale = strength / (c as f64).sqrt();
        let mut mixing = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                mixing[i * c + j] = if i == j { 1.0 } else { 0.0 } + scale * gaussian(rng);
            }
        }
        let mut draw = |s: f64| -> Vec<f64> { (0..c).map(|_| s * strength * gaussian(rng)).collect() };
        let gain = draw(2.0).into_iter().map(f64::exp).collect();
        let offset = draw(1.0);
        let drift_gain = draw(2.0);
        let drift_offset = draw(2.0);
        SubjectShift { mixing, gain, offset, drift_gain, drift_offset }
    }
}

/// Generates one [`TrialSet`] per subject (ids `0..subjects`).
///
/// Class `c` has a fixed unit-norm spatial pattern `a_c` and a source `s_c`
/// made of [`SOURCE_COMPONENTS`] sinusoids in [`SOURCE_BAND`], shifted in phase
/// per trial by up to [`PHASE_JITTER`]. A trial is `M_k·a_c·s_c(t) + noise`
/// with `M_k = I + shift·G_k/√C`, then scaled and offset per channel. Gains and
/// offsets drift linearly across the session in trial order. Labels are
/// balanced and shuffled.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TrialSet>> {
    spec.validate()?;
    let (c, t, nc) = (spec.channels, spec.samples, spec.classes);
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 0, 0);
    let patterns: Vec<Vec<f64>> = (0..nc)
        .map(|_| {
            let a: Vec<f64> = (0..c).map(|_| gaussian(&mut rng)).collect();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            a.iter().map(|v| v / norm).collect()
        })
        .collect();
    let sources: Vec<Source> = (0..nc).map(|_| Source::draw(&mut rng)).collect();
    // a unit-norm pattern times a unit-power source has mean power 1/(2C) per channel
    let noise_sd = if spec.snr.is_infinite() { 0.0 } else { (0.5 / c as f64 / spec.snr).sqrt() };

    let mut out = Vec::with_capacity(spec.subjects);
    for k in 0..spec.subjects {
        let mut rng = stream_rng(spec.seed, Stream::Synthetic, k as u64 + 1, 0);
        let shift = SubjectShift::draw(c, spec.shift_strength, &mut rng);
        let mixed: Vec<Vec<f64>> = patterns
            .iter()
            .map(|a| (0..c).map(|i| (0..c).map(|j| shift.mixing[i * c + j] * a[j]).sum()).collect())
            .collect();
        let mut labels: Vec<u16> = (0..spec.trials_per_subject).map(|i| (i % nc + 1) as u16).collect();
        labels.shuffle(&mut rng);

        let mut data = Vec::with_capacity(spec.trials_per_subject * c * t);
        let mut source = vec![0.0; t];
        for (trial, &label) in labels.iter().enumerate() {
            let class = label as usize - 1;
            let u = 2.0 * trial as f64 / spec.trials_per_subject as f64 - 1.0;
            sources[class].render(rng.gen_range(-PHASE_JITTER..=PHASE_JITTER), &mut source);
            for ch in 0..c {
                let w = mixed[class][ch];
                let gain = shift.gain[ch] * (shift.drift_gain[ch] * u).exp();
                let (offset, drift) = (shift.offset[ch], shift.drift_offset[ch] * u);
                for &s in &source {
                    data.push(gain * (w * s + noise_sd * gaussian(&mut rng)) + offset + drift);
                }
            }
        }
        out.push(TrialSet::new(k as u32, c, t, nc, data, labels)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            subjects: 3,
            trials_per_subject: 40,
            channels: 4,
            samples: 64,
            classes: 2,
            snr: 2.0,
            shift_strength: 0.5,
            seed: 1,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&spec()).unwrap();
        assert_eq!(a, generate_synthetic(&spec()).unwrap());
        let other = generate_synthetic(&SyntheticSpec { seed: 2, ..spec() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn labels_are_balanced() {
        for s in generate_synthetic(&SyntheticSpec { classes: 3, trials_per_subject: 30, ..spec() }).unwrap() {
            for class in 1..=3u16 {
                assert_eq!(s.labels().iter().filter(|&&l| l == class).count(), 10);
            }
        }
    }

    #[test]
    fn unshifted_noiseless_subjects_differ_only_in_phase() {
        let sp = SyntheticSpec { shift_strength: 0.0, snr: f64::INFINITY, ..spec() };
        let sets = generate_synthetic(&sp).unwrap();
        // every trial is a_c ⊗ s_c(t + jitter): the per-channel energy share is a_c²
        let profile = |x: &[f64]| -> Vec<f64> {
            let e: Vec<f64> = x.chunks(sp.samples).map(|row| row.iter().map(|v| v * v).sum()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| v / total).collect()
        };
        let mut reference: Vec<Option<Vec<f64>>> = vec![None; sp.classes];
        for s in &sets {
            for i in 0..s.len() {
                let p = profile(s.trial(i));
                let r = reference[s.labels()[i] as usize - 1].get_or_insert_with(|| p.clone());
                assert!(p.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
            }
        }
        assert_ne!(reference[0], reference[1]);
    }

    #[test]
    fn shift_drifts_within_the_session() {
        let sp = SyntheticSpec { snr: f64::INFINITY, trials_per_subject: 100, ..spec() };
        let set = &generate_synthetic(&sp).unwrap()[0];
        let mean = |i: usize| set.trial(i).iter().sum::<f64>() / set.trial(i).len() as f64;
        let early: f64 = (0..10).map(mean).sum::<f64>() / 10.0;
        let late: f64 = (90..100).map(mean).sum::<f64>() / 10.0;
        assert!((early - late).abs() > 0.05, "early {early}, late {late}");
    }

    #[test]
    fn linear_classifier_on_log_power_separates_unshifted_data() {
        let sp = SyntheticSpec { shift_strength: 0.0, subjects: 4, trials_per_subject: 60, ..spec() };
        let sets = generate_synthetic(&sp).unwrap();
        let features = |x: &[f64]| -> Vec<f64> {
            x.chunks(sp.samples)
                .map(|row| {
                    let m = row.iter().sum::<f64>() / row.len() as f64;
                    (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len() as f64).ln()
                })
                .collect()
        };
        let mut all: Vec<(Vec<f64>, usize)> = Vec::new();
        for s in &sets {
            for i in 0..s.len() {
                all.push((features(s.trial(i)), s.labels()[i] as usize - 1));
            }
        }
        // nearest class mean is a linear decision rule
        let (train, test) = all.split_at(all.len() / 2);
        let mut means = vec![vec![0.0; sp.channels]; 2];
        let mut counts = [0.0; 2];
        for (f, y) in train {
            counts[*y] += 1.0;
            means[*y].iter_mut().zip(f).for_each(|(m, v)| *m += v);
        }
        for (m, n) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|v| *v /= n);
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let correct = test
            .iter()
            .filter(|(f, y)| (dist(f, &means[0]) > dist(f, &means[1])) as usize == *y)
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&SyntheticSpec { subjects: 0, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { snr: 0.0, ..spec() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { shift_strength: -1.0, ..spec() }).is_err());
    }
}
