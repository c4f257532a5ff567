//! Trial storage, file formats, the synthetic generator and LOSO splits.

mod io;
mod synthetic;
mod trials;

pub use io::{read_csv, read_csv_from, read_trials, read_trials_from, write_csv_to, write_trials, write_trials_to};
pub use synthetic::{generate_synthetic, SyntheticSpec, BENCHMARK_SNR, PHASE_JITTER, SAMPLE_RATE, SOURCE_BAND, SOURCE_COMPONENTS};
pub use trials::{loso_split, TrialSet};
