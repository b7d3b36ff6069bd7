//! Multiscale sampling for Bayesian inversion of a two-dimensional elliptic
//! problem with domain-decomposed Karhunen-Loève priors.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod field;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod random_field;
pub mod samplers;
pub mod verification;

pub use coupling::{CouplingKind, CouplingLayout, EllipseFractions, ExtendedBasis};
pub use error::{Error, Result};
pub use field::{Field, FieldRole, ThetaVector};
pub use forward::{EllipticProblem, LikelihoodPair, ObservationModel, Stage};
pub use grid::{build_partition, Grid, Grid1D, SubdomainPartition};
pub use random_field::{CovarianceParams, KleBasis};
pub use samplers::{
    ChainRecord, ChainState, MsmConfig, MsmSampler, Proposal, ProposalKind, SamplerMode,
};
