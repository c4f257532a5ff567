//! Accuracy evaluation, paired statistics and feature separability.

mod evaluate;
mod gdv;
mod stats;
mod table;

pub use evaluate::{evaluate, extract_features, Accuracy};
pub use gdv::gdv;
pub use stats::{benjamini_hochberg, ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_sided_p, TestReport};
pub use table::{write_comparisons_csv, AccuracyTable, Comparison};
