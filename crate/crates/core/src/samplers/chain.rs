//! The multiscale sampler: one Gibbs cycle visits every subdomain in ascending
//! order, proposing on that block and screening with the coarse model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metropolis::{accept, log_acceptance, two_stage_step, Candidate, MhDecision, Staged};
use super::proposal::{Block, Proposal, ProposalKind};
use crate::coupling::{
    assemble_global_average, assemble_local_average, assemble_uncoupled, CouplingKind,
    CouplingLayout, LocalAverageState,
};
use crate::error::{Error, Result};
use crate::field::{Field, ThetaVector};
use crate::forward::{log_likelihood, LikelihoodPair, Stage};
use crate::random_field::{log_prior_theta, KleBasis};

pub trait LogLikelihood: Sync {
    fn log_likelihood(&self, eta: &Field, stage: Stage) -> Result<f64>;
}

impl LogLikelihood for LikelihoodPair {
    fn log_likelihood(&self, eta: &Field, stage: Stage) -> Result<f64> {
        log_likelihood(eta, self, stage)
    }
}

/// No data: the chain targets the prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatLikelihood;

impl LogLikelihood for FlatLikelihood {
    fn log_likelihood(&self, _eta: &Field, _stage: Stage) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    SingleStage,
    TwoStage,
}

/// How the prior and proposal ratios enter the acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorHandling {
    /// Evaluate `π(y)q(x|y) / π(x)q(y|x)` term by term.
    #[default]
    Explicit,
    /// Use the pCN identity: the whole correction equals one.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsmConfig {
    pub coupling: CouplingKind,
    pub proposal: Proposal,
    pub mode: SamplerMode,
    #[serde(default)]
    pub prior_handling: PriorHandling,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubdomainStats {
    pub proposals: u64,
    pub promotions: u64,
    pub acceptances: u64,
}

impl SubdomainStats {
    pub fn promotion_rate(&self) -> f64 {
        ratio(self.promotions, self.proposals)
    }

    /// Accepted over promoted.
    pub fn stage2_rate(&self) -> f64 {
        ratio(self.acceptances, self.promotions)
    }

    pub fn acceptance_rate(&self) -> f64 {
        ratio(self.acceptances, self.proposals)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStats {
    pub per_subdomain: Vec<SubdomainStats>,
    /// Fine solves triggered by proposals; initial and audit solves are excluded.
    pub fine_solves: u64,
    pub coarse_solves: u64,
}

impl ChainStats {
    fn new(blocks: usize) -> Self {
        Self {
            per_subdomain: vec![SubdomainStats::default(); blocks],
            ..Self::default()
        }
    }

    pub fn proposals(&self) -> u64 {
        self.per_subdomain.iter().map(|s| s.proposals).sum()
    }

    pub fn promotions(&self) -> u64 {
        self.per_subdomain.iter().map(|s| s.promotions).sum()
    }

    pub fn acceptances(&self) -> u64 {
        self.per_subdomain.iter().map(|s| s.acceptances).sum()
    }

    pub fn stage1_rejections(&self) -> u64 {
        self.proposals() - self.promotions()
    }
}

/// Current accepted state of one chain. For local averaging `eta` is also the
/// history the next assembly reads outside the active subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: ThetaVector,
    pub eta: Field,
    pub log_prior: f64,
    /// Present only for two-stage sampling.
    pub log_lc: Option<f64>,
    pub log_lf: f64,
    /// Completed Gibbs cycles.
    pub iteration: u64,
    pub stats: ChainStats,
}

/// One subdomain visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub iteration: u64,
    pub active: usize,
    /// Passed to the fine model (always true for single-stage sampling).
    pub promoted: bool,
    pub accepted: bool,
    #[serde(with = "super::log_value", default)]
    pub log_g: Option<f64>,
    #[serde(with = "super::log_value", default)]
    pub log_rho: Option<f64>,
    /// Single-stage acceptance probability.
    #[serde(with = "super::log_value", default)]
    pub log_alpha: Option<f64>,
    #[serde(with = "super::log_value", default)]
    pub uniform_1: Option<f64>,
    #[serde(with = "super::log_value", default)]
    pub uniform_2: Option<f64>,
    pub theta_star: Vec<f64>,
    #[serde(with = "super::log_value", default)]
    pub log_lc: Option<f64>,
    pub log_lf: f64,
}

pub const LOCAL_AVERAGE_PRIOR_NOTE: &str = "local averaging: the prior is evaluated on theta as the algorithm \
     prescribes, but the induced distribution on the generated fields is not a well-defined density";

pub struct MsmSampler<'a, L: LogLikelihood + ?Sized> {
    bases: &'a [KleBasis],
    layout: &'a CouplingLayout,
    likelihood: &'a L,
    config: MsmConfig,
}

impl<'a, L: LogLikelihood + ?Sized> MsmSampler<'a, L> {
    pub fn new(
        config: MsmConfig,
        bases: &'a [KleBasis],
        layout: &'a CouplingLayout,
        likelihood: &'a L,
    ) -> Result<Self> {
        config.coupling.validate()?;
        layout.check_bases(bases)?;
        if config.prior_handling == PriorHandling::Cancelled
            && config.proposal.kind != ProposalKind::Pcn
        {
            return Err(Error::Config(
                "the cancelled prior path is only valid for the pCN proposal".into(),
            ));
        }
        if let Some(b) = bases.first() {
            if bases.iter().any(|x| x.n_c() != b.n_c()) {
                return Err(Error::Contract(
                    "all subdomains must use the same number of modes".into(),
                ));
            }
        }
        Ok(Self {
            bases,
            layout,
            likelihood,
            config,
        })
    }

    pub fn config(&self) -> &MsmConfig {
        &self.config
    }

    pub fn blocks(&self) -> usize {
        self.bases.len()
    }

    pub fn n_c(&self) -> usize {
        self.bases.first().map_or(0, KleBasis::n_c)
    }

    /// Diagnostic attached to local-averaging runs.
    pub fn prior_diagnostic(&self) -> Option<&'static str> {
        matches!(self.config.coupling, CouplingKind::LocalAverage { .. })
            .then_some(LOCAL_AVERAGE_PRIOR_NOTE)
    }

    fn two_stage(&self) -> bool {
        self.config.mode == SamplerMode::TwoStage
    }

    /// Initial state. Local averaging starts from the uncoupled field.
    pub fn init(&self, theta: ThetaVector) -> Result<ChainState> {
        let eta = match self.config.coupling {
            CouplingKind::Uncoupled | CouplingKind::LocalAverage { .. } => {
                assemble_uncoupled(&theta, self.bases, self.layout)?
            }
            CouplingKind::GlobalAverage { .. } => {
                assemble_global_average(&theta, self.bases, self.layout)?
            }
        };
        let log_lc = if self.two_stage() {
            Some(self.likelihood.log_likelihood(&eta, Stage::Coarse)?)
        } else {
            None
        };
        let log_lf = self.likelihood.log_likelihood(&eta, Stage::Fine)?;
        let state = ChainState {
            log_prior: log_prior_theta(&theta),
            theta,
            eta,
            log_lc,
            log_lf,
            iteration: 0,
            stats: ChainStats::new(self.blocks()),
        };
        if !state.log_lf.is_finite() || state.log_lc.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Invariant(
                "initial state lies outside the support of the target".into(),
            ));
        }
        Ok(state)
    }

    /// `η* = G(θ*)` for the configured coupling.
    pub fn assemble(
        &self,
        theta_star: &ThetaVector,
        active: usize,
        state: &ChainState,
    ) -> Result<Field> {
        match self.config.coupling {
            CouplingKind::Uncoupled => assemble_uncoupled(theta_star, self.bases, self.layout),
            CouplingKind::GlobalAverage { .. } => {
                assemble_global_average(theta_star, self.bases, self.layout)
            }
            CouplingKind::LocalAverage { .. } => assemble_local_average(
                theta_star,
                active,
                LocalAverageState {
                    theta: &state.theta,
                    eta: &state.eta,
                },
                self.bases,
                self.layout,
            ),
        }
    }

    /// `[π(y) + q(x|y)] − [π(x) + q(y|x)]` for a move on block `active`.
    pub fn log_correction(
        &self,
        x: &ThetaVector,
        log_prior_x: f64,
        y: &ThetaVector,
        log_prior_y: f64,
        active: usize,
    ) -> f64 {
        match self.config.prior_handling {
            PriorHandling::Cancelled => 0.0,
            PriorHandling::Explicit => {
                let r = x.block_range(active);
                (log_prior_y - log_prior_x)
                    + self
                        .config
                        .proposal
                        .log_ratio(&x.as_slice()[r.clone()], &y.as_slice()[r])
            }
        }
    }

    /// One visit to subdomain `active`. Does not advance the cycle counter.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        active: usize,
        rng: &mut R,
    ) -> Result<ChainRecord> {
        if active >= self.blocks() {
            return Err(Error::Contract(format!("subdomain {active} out of range")));
        }
        let theta_star = self
            .config
            .proposal
            .propose(&state.theta, Block::Subdomain(active), rng);
        let eta_star = self.assemble(&theta_star, active, state)?;
        let log_prior_star = log_prior_theta(&theta_star);
        let correction = self.log_correction(
            &state.theta,
            state.log_prior,
            &theta_star,
            log_prior_star,
            active,
        );

        let mut fine_solves = 0u64;
        let mut coarse_solves = 0u64;
        let mut fine = |eta: &Field| {
            fine_solves += 1;
            self.likelihood.log_likelihood(eta, Stage::Fine)
        };

        let mut record = ChainRecord {
            iteration: state.iteration,
            active,
            promoted: false,
            accepted: false,
            log_g: None,
            log_rho: None,
            log_alpha: None,
            uniform_1: None,
            uniform_2: None,
            theta_star: theta_star.as_slice().to_vec(),
            log_lc: None,
            log_lf: 0.0,
        };
        let mut new_likelihoods: Option<(Option<f64>, f64)> = None;

        if let Some(lc_x) = state.log_lc {
            let current = Staged {
                point: false,
                log_prior: state.log_prior,
                log_lc: lc_x,
                log_lf: state.log_lf,
            };
            let candidate = Candidate {
                point: true,
                log_prior: log_prior_star,
                log_correction: correction,
            };
            let mut coarse = |eta: &Field| {
                coarse_solves += 1;
                self.likelihood.log_likelihood(eta, Stage::Coarse)
            };
            let (next, decision) = two_stage_step(
                current,
                candidate,
                |_: &bool| coarse(&eta_star),
                |_: &bool| fine(&eta_star),
                rng,
            )?;
            record.promoted = decision.promoted();
            record.accepted = decision.accepted();
            record.log_g = Some(decision.stage1.log_alpha);
            record.uniform_1 = Some(decision.stage1.uniform);
            record.log_rho = decision.stage2.map(|d| d.log_alpha);
            record.uniform_2 = decision.stage2.map(|d| d.uniform);
            if next.point {
                new_likelihoods = Some((Some(next.log_lc), next.log_lf));
            }
        } else {
            let lf_y = fine(&eta_star)?;
            if lf_y.is_nan() || lf_y == f64::INFINITY {
                return Err(Error::Invariant(format!(
                    "fine log-likelihood at the proposal is {lf_y}"
                )));
            }
            let decision: MhDecision = accept(log_acceptance(state.log_lf, lf_y, correction), rng);
            record.promoted = true;
            record.accepted = decision.accepted;
            record.log_alpha = Some(decision.log_alpha);
            record.uniform_1 = Some(decision.uniform);
            if decision.accepted {
                new_likelihoods = Some((None, lf_y));
            }
        }

        let stats = &mut state.stats;
        stats.fine_solves += fine_solves;
        stats.coarse_solves += coarse_solves;
        let sub = &mut stats.per_subdomain[active];
        sub.proposals += 1;
        sub.promotions += u64::from(record.promoted);
        sub.acceptances += u64::from(record.accepted);

        if let Some((lc, lf)) = new_likelihoods {
            state.theta = theta_star;
            state.eta = eta_star;
            state.log_prior = log_prior_star;
            state.log_lc = lc;
            state.log_lf = lf;
        }
        record.log_lc = state.log_lc;
        record.log_lf = state.log_lf;
        Ok(record)
    }

    /// One full Gibbs cycle in ascending subdomain order.
    pub fn cycle<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        rng: &mut R,
    ) -> Result<Vec<ChainRecord>> {
        let records = (0..self.blocks())
            .map(|i| self.step(state, i, rng))
            .collect::<Result<Vec<_>>>()?;
        state.iteration += 1;
        Ok(records)
    }

    /// Run `cycles` cycles, handing each cycle's records to `sink`.
    pub fn run<R, F>(
        &self,
        state: &mut ChainState,
        cycles: u64,
        rng: &mut R,
        mut sink: F,
    ) -> Result<()>
    where
        R: Rng + ?Sized,
        F: FnMut(&ChainState, &[ChainRecord]) -> Result<()>,
    {
        for _ in 0..cycles {
            let records = self.cycle(state, rng)?;
            sink(state, &records)?;
        }
        Ok(())
    }

    /// Recompute cached quantities from scratch and compare within `1e-10`.
    pub fn audit(&self, state: &ChainState) -> Result<()> {
        let tol = 1e-10;
        let mismatch = |what: &str, cached: f64, fresh: f64| -> Result<()> {
            if (cached - fresh).abs() > tol * (1.0 + fresh.abs()) {
                Err(Error::Invariant(format!(
                    "cached {what} {cached} differs from recomputed {fresh}"
                )))
            } else {
                Ok(())
            }
        };
        if !matches!(self.config.coupling, CouplingKind::LocalAverage { .. }) {
            let fresh = match self.config.coupling {
                CouplingKind::GlobalAverage { .. } => {
                    assemble_global_average(&state.theta, self.bases, self.layout)?
                }
                _ => assemble_uncoupled(&state.theta, self.bases, self.layout)?,
            };
            mismatch("field", 0.0, fresh.max_abs_diff(&state.eta))?;
        }
        mismatch("log-prior", state.log_prior, log_prior_theta(&state.theta))?;
        mismatch(
            "fine log-likelihood",
            state.log_lf,
            self.likelihood.log_likelihood(&state.eta, Stage::Fine)?,
        )?;
        match (state.log_lc, self.two_stage()) {
            (Some(lc), true) => mismatch(
                "coarse log-likelihood",
                lc,
                self.likelihood.log_likelihood(&state.eta, Stage::Coarse)?,
            ),
            (None, false) => Ok(()),
            _ => Err(Error::Invariant(
                "coarse cache does not match the sampler mode".into(),
            )),
        }
    }
}

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: JSON numbers cannot carry 128 bits.
    pub word_pos: String,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

pub const CHECKPOINT_FORMAT: &str = "msm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub state: ChainState,
    pub rng: RngSnapshot,
}

impl Checkpoint {
    pub fn new(state: &ChainState, rng: &ChaCha8Rng) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            state: state.clone(),
            rng: RngSnapshot::capture(rng),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::EllipseFractions;
    use crate::forward::{sensor_lattice, ObservationModel};
    use crate::grid::{Grid, SubdomainPartition};
    use crate::random_field::{local_kle_all, sample_prior_theta, CovarianceParams};
    use rand::SeedableRng;

    struct Fixture {
        bases: Vec<KleBasis>,
        layout: CouplingLayout,
        pair: LikelihoodPair,
    }

    fn fixture(mc: usize, kind: &CouplingKind) -> Fixture {
        let grid = Grid::new(8).unwrap();
        let partition = SubdomainPartition::new(grid, mc, mc, usize::from(mc > 1)).unwrap();
        let params = CovarianceParams::new(1.0, 0.3, 0.3).unwrap();
        let bases = local_kle_all(&partition, &params, 2).unwrap();
        let layout = CouplingLayout::for_kind(&partition, kind, 0.3, 0.3);
        let sensors = sensor_lattice(2);
        let seed_obs = ObservationModel::new(sensors.clone(), vec![0.0; 4], 1.0).unwrap();
        let probe = LikelihoodPair::new(grid, 2, seed_obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let theta = sample_prior_theta(&mut rng, bases.len(), 2);
        let eta = assemble_uncoupled(&theta, &bases, &layout).unwrap();
        let data = probe.predict(&eta, Stage::Fine).unwrap();
        let pair =
            LikelihoodPair::new(grid, 2, ObservationModel::new(sensors, data, 0.01).unwrap())
                .unwrap();
        Fixture {
            bases,
            layout,
            pair,
        }
    }

    fn config(kind: CouplingKind, mode: SamplerMode, prior_handling: PriorHandling) -> MsmConfig {
        MsmConfig {
            coupling: kind,
            proposal: Proposal::new(ProposalKind::Pcn, 0.5).unwrap(),
            mode,
            prior_handling,
        }
    }

    fn global() -> CouplingKind {
        CouplingKind::GlobalAverage {
            ellipse: EllipseFractions::default(),
        }
    }

    fn run_records(
        s: &MsmSampler<'_, LikelihoodPair>,
        cycles: u64,
        seed: u64,
    ) -> (ChainState, Vec<ChainRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = sample_prior_theta(&mut rng, s.blocks(), s.n_c());
        let mut state = s.init(theta).unwrap();
        let mut all = Vec::new();
        s.run(&mut state, cycles, &mut rng, |_, r| {
            all.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        (state, all)
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let f = fixture(2, &global());
        let s = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        assert_eq!(run_records(&s, 15, 4), run_records(&s, 15, 4));
        assert_ne!(run_records(&s, 15, 4).0, run_records(&s, 15, 5).0);
    }

    #[test]
    fn each_step_moves_only_the_active_block() {
        for kind in [
            CouplingKind::Uncoupled,
            global(),
            CouplingKind::LocalAverage {
                ellipse: EllipseFractions::default(),
            },
        ] {
            let f = fixture(2, &kind);
            let s = MsmSampler::new(
                config(kind, SamplerMode::TwoStage, PriorHandling::Explicit),
                &f.bases,
                &f.layout,
                &f.pair,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut state = s.init(ThetaVector::zeros(4, 2)).unwrap();
            for c in 0..10 {
                for active in 0..4 {
                    let before = state.theta.clone();
                    let r = s.step(&mut state, active, &mut rng).unwrap();
                    assert_eq!((r.active, r.iteration), (active, c));
                    let star = ThetaVector::new(r.theta_star.clone(), 2).unwrap();
                    assert!(before.differing_blocks(&star).iter().all(|&b| b == active));
                    assert!(before
                        .differing_blocks(&state.theta)
                        .iter()
                        .all(|&b| b == active));
                }
                state.iteration += 1;
                s.audit(&state).unwrap();
            }
            let recs = s.cycle(&mut state, &mut rng).unwrap();
            assert_eq!(
                recs.iter().map(|r| r.active).collect::<Vec<_>>(),
                vec![0, 1, 2, 3]
            );
            assert_eq!(state.iteration, 11);
        }
    }

    #[test]
    fn cancelled_prior_path_agrees_with_explicit() {
        let f = fixture(2, &global());
        let explicit = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let cancelled = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Cancelled),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = sample_prior_theta(&mut rng, 4, 2);
            let y = explicit
                .config()
                .proposal
                .propose(&x, Block::Subdomain(2), &mut rng);
            let c = explicit.log_correction(&x, log_prior_theta(&x), &y, log_prior_theta(&y), 2);
            assert!(c.abs() < 1e-12, "{c}");
        }
        let (a, ra) = run_records(&explicit, 20, 3);
        let (b, rb) = run_records(&cancelled, 20, 3);
        assert_eq!(
            ra.iter().map(|r| r.accepted).collect::<Vec<_>>(),
            rb.iter().map(|r| r.accepted).collect::<Vec<_>>()
        );
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn cancelled_requires_pcn() {
        let f = fixture(2, &global());
        let mut cfg = config(global(), SamplerMode::TwoStage, PriorHandling::Cancelled);
        cfg.proposal = Proposal::new(ProposalKind::RandomWalk, 0.5).unwrap();
        assert!(matches!(
            MsmSampler::new(cfg, &f.bases, &f.layout, &f.pair),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn one_subdomain_reduces_to_plain_two_stage() {
        let f = fixture(1, &global());
        let coupled = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let g = fixture(1, &CouplingKind::Uncoupled);
        let plain = MsmSampler::new(
            config(
                CouplingKind::Uncoupled,
                SamplerMode::TwoStage,
                PriorHandling::Explicit,
            ),
            &g.bases,
            &g.layout,
            &g.pair,
        )
        .unwrap();
        let (a, ra) = run_records(&coupled, 30, 6);
        let (b, rb) = run_records(&plain, 30, 6);
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.len(), 30);
    }

    #[test]
    fn solve_counters_follow_the_cost_contract() {
        let f = fixture(2, &global());
        let two = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let (state, recs) = run_records(&two, 40, 2);
        let stats = &state.stats;
        assert_eq!(stats.proposals(), recs.len() as u64);
        assert_eq!(stats.coarse_solves, stats.proposals());
        assert_eq!(
            stats.fine_solves,
            recs.iter().filter(|r| r.promoted).count() as u64
        );
        assert!(stats.stage1_rejections() > 0);
        assert!(stats.fine_solves < stats.proposals());

        let one = MsmSampler::new(
            config(global(), SamplerMode::SingleStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let (state, recs) = run_records(&one, 10, 2);
        assert_eq!(state.stats.fine_solves, state.stats.proposals());
        assert!(state.log_lc.is_none() && recs.iter().all(|r| r.promoted && r.log_g.is_none()));
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let f = fixture(2, &global());
        let s = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut state = s.init(sample_prior_theta(&mut rng, 4, 2)).unwrap();
        let mut rng2 = rng.clone();
        let mut full = state.clone();
        s.run(&mut full, 10, &mut rng2, |_, _| Ok(())).unwrap();

        s.run(&mut state, 4, &mut rng, |_, _| Ok(())).unwrap();
        let text = Checkpoint::new(&state, &rng).to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        let mut rng = back.rng.restore().unwrap();
        let mut resumed = back.state;
        s.run(&mut resumed, 6, &mut rng, |_, _| Ok(())).unwrap();
        assert_eq!(resumed, full);

        let bad = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(Checkpoint::from_json(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn audit_detects_tampering() {
        let f = fixture(2, &global());
        let s = MsmSampler::new(
            config(global(), SamplerMode::TwoStage, PriorHandling::Explicit),
            &f.bases,
            &f.layout,
            &f.pair,
        )
        .unwrap();
        let (mut state, _) = run_records(&s, 5, 1);
        s.audit(&state).unwrap();
        state.log_lf += 1e-3;
        assert!(matches!(s.audit(&state), Err(Error::Invariant(_))));
    }
}
