//! Shared fixtures for the benchmarks.

use msm_core::experiment::{generate_truth, ExperimentConfig, Problem};

/// Default desk-scale problem: 16×16 grid, 2×2 subdomains, four modes each.
pub fn desk_problem() -> Problem {
    let cfg = ExperimentConfig::default();
    let truth = generate_truth(&cfg).expect("default truth");
    Problem::new(&cfg, truth).expect("default problem")
}
