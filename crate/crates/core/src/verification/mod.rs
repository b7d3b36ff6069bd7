//! Executable checks of the sampler's theory: exact kernels on small state
//! spaces, sampler identities, moment formulas and the 1D example analyses.

pub mod conditions;
pub mod discrete;
pub mod example1d;
pub mod identities;
pub mod moments;
pub mod prior_on_v;
pub mod suite;

pub use discrete::{exact_mh_kernel, exact_two_stage_kernel, DiscreteChainSpec, TwoStageKernel};
pub use example1d::{local_average_history_demo, ExampleGeometry, HistoryDraws, HistoryReport};
pub use identities::{pcn_ratio_identity_check, rho_identity_check};
pub use moments::{posterior_moment_check, MomentReport};
pub use prior_on_v::{prior_on_v_check, PriorOnVReport};
pub use suite::{format_table, run_suite, CheckOutcome};
