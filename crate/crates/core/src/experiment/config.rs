//! Experiment configuration, read from and echoed as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::{CouplingKind, EllipseFractions};
use crate::error::{Error, Result};
use crate::grid::{Grid, SubdomainPartition};
use crate::random_field::CovarianceParams;
use crate::samplers::{PriorHandling, Proposal, ProposalKind, SamplerMode};

pub const CONFIG_FORMAT: &str = "msm-config";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Cells per side of the fine grid.
    pub n: usize,
    /// Coarse grid has `n / coarsening` cells per side.
    pub coarsening: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub mc_x: usize,
    pub mc_y: usize,
    /// Averaging band half-width in fine cells.
    pub hbar_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub sigma2: f64,
    pub lx: f64,
    pub ly: f64,
    /// Modes per subdomain.
    pub n_c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub proposal: ProposalKind,
    pub beta: f64,
    pub mode: SamplerMode,
    #[serde(default)]
    pub prior_handling: PriorHandling,
    /// Gibbs cycles per chain.
    pub cycles: u64,
    pub burn_in: u64,
    pub seed: u64,
    #[serde(default = "one")]
    pub chains: usize,
    /// Recompute cached likelihoods every this many cycles (0 disables).
    #[serde(default)]
    pub audit_every: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    /// Sensors on a `k × k` interior lattice.
    pub sensors: usize,
    pub noise_variance: f64,
    /// Existing data file; synthetic truth is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    /// Modes of the global expansion used to draw the true field.
    pub modes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kle_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: String,
    pub version: u32,
    pub grid: GridSection,
    pub partition: PartitionSection,
    pub prior: PriorSection,
    pub coupling: CouplingKind,
    pub sampler: SamplerSection,
    pub observations: ObservationSection,
    pub truth: TruthSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            version: CONFIG_VERSION,
            grid: GridSection {
                n: 16,
                coarsening: 2,
            },
            partition: PartitionSection {
                mc_x: 2,
                mc_y: 2,
                hbar_cells: 1,
            },
            prior: PriorSection {
                sigma2: 1.0,
                lx: 0.25,
                ly: 0.25,
                n_c: 4,
            },
            coupling: CouplingKind::GlobalAverage {
                ellipse: EllipseFractions::default(),
            },
            sampler: SamplerSection {
                proposal: ProposalKind::Pcn,
                beta: 0.1,
                mode: SamplerMode::TwoStage,
                prior_handling: PriorHandling::Explicit,
                cycles: 2000,
                burn_in: 500,
                seed: 1,
                chains: 1,
                audit_every: 0,
            },
            observations: ObservationSection {
                sensors: 3,
                noise_variance: 1e-4,
                data: None,
            },
            truth: TruthSection { modes: 64, seed: 7 },
            output: OutputSection {
                dir: PathBuf::from("msm-out"),
                kle_cache: None,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n)
    }

    pub fn partition(&self) -> Result<SubdomainPartition> {
        SubdomainPartition::new(
            self.grid()?,
            self.partition.mc_x,
            self.partition.mc_y,
            self.partition.hbar_cells,
        )
    }

    pub fn covariance(&self) -> Result<CovarianceParams> {
        CovarianceParams::new(self.prior.sigma2, self.prior.lx, self.prior.ly)
    }

    pub fn proposal(&self) -> Result<Proposal> {
        Proposal::new(self.sampler.proposal, self.sampler.beta)
    }

    /// All cross-field constraints; every failure is a configuration error.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) | Error::Contract(m) | Error::Domain(m) => Error::Config(m),
            other => other,
        };
        if self.format != CONFIG_FORMAT || self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config format {} v{} (expected {CONFIG_FORMAT} v{CONFIG_VERSION})",
                self.format, self.version
            )));
        }
        let partition = self.partition().map_err(cfg_err)?;
        let n = self.grid.n;
        if self.grid.coarsening < 2 || !n.is_multiple_of(self.grid.coarsening) {
            return Err(Error::Config(format!(
                "coarsening factor {} must be at least 2 and divide n = {n}",
                self.grid.coarsening
            )));
        }
        self.covariance().map_err(cfg_err)?;
        let (sx, sy) = partition.cells_per_side();
        if self.prior.n_c == 0 || self.prior.n_c > sx * sy {
            return Err(Error::Config(format!(
                "n_c = {} must lie between 1 and the {} cells of a subdomain",
                self.prior.n_c,
                sx * sy
            )));
        }
        self.coupling.validate()?;
        self.proposal()?;
        if self.sampler.prior_handling == PriorHandling::Cancelled
            && self.sampler.proposal != ProposalKind::Pcn
        {
            return Err(Error::Config(
                "prior_handling = \"cancelled\" requires the pcn proposal".into(),
            ));
        }
        if self.sampler.cycles == 0 || self.sampler.burn_in >= self.sampler.cycles {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than cycles ({})",
                self.sampler.burn_in, self.sampler.cycles
            )));
        }
        if self.sampler.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.observations.sensors == 0 {
            return Err(Error::Config(
                "the sensor lattice needs at least one sensor per side".into(),
            ));
        }
        if !(self.observations.noise_variance >= 0.0)
            || !self.observations.noise_variance.is_finite()
        {
            return Err(Error::Config(format!(
                "noise variance must be non-negative, got {}",
                self.observations.noise_variance
            )));
        }
        if self.truth.modes == 0 || self.truth.modes > n * n {
            return Err(Error::Config(format!(
                "truth modes {} must lie between 1 and {}",
                self.truth.modes,
                n * n
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.observations.data = Some(PathBuf::from("data.json"));
        cfg.coupling = CouplingKind::LocalAverage {
            ellipse: EllipseFractions { fx: 0.3, fy: 0.7 },
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn violations_are_config_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.partition.mc_x = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.partition.hbar_cells = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.grid.coarsening = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.sampler.proposal = ProposalKind::RandomWalk;
        cfg.sampler.prior_handling = PriorHandling::Cancelled;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.sampler.burn_in = cfg.sampler.cycles;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let text = ExperimentConfig::default().to_toml_string().unwrap();
        assert!(
            ExperimentConfig::from_toml_str(&text.replace("version = 1", "version = 2")).is_err()
        );
        let extra = format!("{text}\n[extra]\nkey = 1\n");
        assert!(ExperimentConfig::from_toml_str(&extra).is_err());
    }
}
