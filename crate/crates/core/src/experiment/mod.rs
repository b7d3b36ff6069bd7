//! Configuration, synthetic data, output files and the experiment driver.

pub mod config;
pub mod diagnostics;
pub mod output;
pub mod run;
pub mod truth;

pub use config::ExperimentConfig;
pub use diagnostics::{effective_sample_size, pearson, DiagnosticsSummary};
pub use output::{read_field, read_records, read_samples, SampleTable};
pub use run::{load_or_generate_truth, output_dir, run_experiment, Problem, RunOutcome};
pub use truth::{generate_truth, TruthData};
