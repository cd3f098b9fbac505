//! Datasets, trial runners, the invariance harness and result emission.

pub mod datasets;
pub mod emit;
pub mod invariance;
pub mod stats;
pub mod trials;

pub use datasets::{build_extraction, build_extrapolation, build_word_datasets, Dataset, Example, Split};
pub use trials::{run_trials, Case, ExperimentConfig, TrialOutcome, TrialResult};
