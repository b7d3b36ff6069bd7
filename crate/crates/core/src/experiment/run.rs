//! End-to-end orchestration: data, bases, chains and the merged summary.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupling::CouplingLayout;
use crate::error::{Error, Result};
use crate::forward::LikelihoodPair;
use crate::grid::SubdomainPartition;
use crate::random_field::{local_kle_cached, sample_prior_theta, KleBasis};
use crate::samplers::{ChainState, Checkpoint, MsmConfig, MsmSampler, SamplerMode};

use super::config::ExperimentConfig;
use super::diagnostics::{
    effective_sample_size, pearson, DiagnosticsSummary, SUMMARY_FORMAT, SUMMARY_VERSION,
};
use super::output::{write_field, RecordWriter, SampleWriter};
use super::truth::{generate_truth, TruthData};

pub const OUTPUT_ROOT_ENV: &str = "MSM_OUTPUT_ROOT";

/// Relative output directories are resolved against `MSM_OUTPUT_ROOT` when it is set.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let dir = &cfg.output.dir;
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.clone(),
    }
}

/// Everything a chain needs, built once and shared by all chains.
pub struct Problem {
    pub partition: SubdomainPartition,
    pub bases: Vec<KleBasis>,
    pub layout: CouplingLayout,
    pub likelihood: LikelihoodPair,
    pub truth: TruthData,
    pub sampler: MsmConfig,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig, truth: TruthData) -> Result<Self> {
        cfg.validate()?;
        if truth.grid_n != cfg.grid.n {
            return Err(Error::Config(format!(
                "data file is for a {0}×{0} grid but the config asks for {1}×{1}",
                truth.grid_n, cfg.grid.n
            )));
        }
        let partition = cfg.partition()?;
        let prior = cfg.covariance()?;
        let bases = local_kle_cached(
            &partition,
            &prior,
            cfg.prior.n_c,
            cfg.output.kle_cache.as_deref(),
        )?;
        let layout = CouplingLayout::for_kind(&partition, &cfg.coupling, prior.lx, prior.ly);
        let likelihood =
            LikelihoodPair::new(cfg.grid()?, cfg.grid.coarsening, truth.observation_model()?)?;
        let sampler = MsmConfig {
            coupling: cfg.coupling,
            proposal: cfg.proposal()?,
            mode: cfg.sampler.mode,
            prior_handling: cfg.sampler.prior_handling,
        };
        Ok(Self {
            partition,
            bases,
            layout,
            likelihood,
            truth,
            sampler,
        })
    }

    pub fn sampler(&self) -> Result<MsmSampler<'_, LikelihoodPair>> {
        MsmSampler::new(
            self.sampler.clone(),
            &self.bases,
            &self.layout,
            &self.likelihood,
        )
    }
}

/// Load `observations.data` when given, otherwise generate synthetic truth.
pub fn load_or_generate_truth(cfg: &ExperimentConfig) -> Result<TruthData> {
    match &cfg.observations.data {
        Some(path) => TruthData::read(path),
        None => generate_truth(cfg),
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub chain: usize,
    pub state: ChainState,
    pub retained: u64,
    pub eta_mean: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub ess: Vec<f64>,
    pub samples: PathBuf,
    pub records: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: DiagnosticsSummary,
    pub posterior_mean: Vec<f64>,
    pub chains: Vec<ChainOutcome>,
}

fn chain_file(dir: &Path, stem: &str, ext: &str, chain: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        dir.join(format!("{stem}.{ext}"))
    } else {
        dir.join(format!("{stem}.chain{chain}.{ext}"))
    }
}

/// Seeded RNG of chain `k`: one seed, one ChaCha stream per chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn run_chain(
    cfg: &ExperimentConfig,
    problem: &Problem,
    dir: &Path,
    chain: usize,
) -> Result<ChainOutcome> {
    let sampler = problem.sampler()?;
    let chains = cfg.sampler.chains;
    let samples = chain_file(dir, "samples", "csv", chain, chains);
    let records = chain_file(dir, "records", "jsonl", chain, chains);
    let checkpoint = chain_file(dir, "checkpoint", "json", chain, chains);

    let mut rng = chain_rng(cfg.sampler.seed, chain);
    let theta0 = sample_prior_theta(&mut rng, sampler.blocks(), sampler.n_c());
    let mut state = sampler.init(theta0)?;
    let dim = state.theta.len();
    let cells = state.eta.len();

    let mut sample_writer = SampleWriter::create(&samples, dim)?;
    let mut record_writer = RecordWriter::create(&records)?;
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut eta_sum = vec![0.0; cells];
    let mut retained = 0u64;
    let burn_in = cfg.sampler.burn_in;
    let audit_every = cfg.sampler.audit_every;

    sampler.run(&mut state, cfg.sampler.cycles, &mut rng, |state, recs| {
        for r in recs {
            record_writer.write(r)?;
        }
        if audit_every > 0 && state.iteration % audit_every == 0 {
            sampler.audit(state)?;
        }
        if state.iteration > burn_in {
            sample_writer.write(state.iteration, state.theta.as_slice())?;
            for (s, v) in series.iter_mut().zip(state.theta.as_slice()) {
                s.push(*v);
            }
            for (acc, v) in eta_sum.iter_mut().zip(&state.eta.values) {
                *acc += v;
            }
            retained += 1;
        }
        Ok(())
    })?;
    sample_writer.finish()?;
    record_writer.finish()?;
    std::fs::write(&checkpoint, Checkpoint::new(&state, &rng).to_json()?)?;

    let scale = 1.0 / retained.max(1) as f64;
    Ok(ChainOutcome {
        chain,
        retained,
        eta_mean: eta_sum.iter().map(|v| v * scale).collect(),
        theta_mean: series
            .iter()
            .map(|s| s.iter().sum::<f64>() * scale)
            .collect(),
        ess: series.iter().map(|s| effective_sample_size(s)).collect(),
        state,
        samples,
        records,
        checkpoint,
    })
}

/// Run every configured chain and write the merged artifacts into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let truth = load_or_generate_truth(cfg)?;
    let problem = Problem::new(cfg, truth)?;
    let dir = output_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    problem.truth.write(&dir.join("data.json"))?;

    let chains = cfg.sampler.chains;
    let outcomes: Vec<ChainOutcome> = if chains == 1 {
        vec![run_chain(cfg, &problem, &dir, 0)?]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..chains)
                .map(|k| {
                    let (problem, dir) = (&problem, &dir);
                    scope.spawn(move || run_chain(cfg, problem, dir, k))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .map_err(|_| Error::Invariant("chain worker panicked".into()))?
                })
                .collect::<Result<Vec<_>>>()
        })?
    };
    reduce(cfg, &problem, dir, outcomes)
}

fn reduce(
    cfg: &ExperimentConfig,
    problem: &Problem,
    dir: PathBuf,
    chains: Vec<ChainOutcome>,
) -> Result<RunOutcome> {
    let retained: u64 = chains.iter().map(|c| c.retained).sum();
    let weight = |c: &ChainOutcome| c.retained as f64 / retained.max(1) as f64;
    let pooled = |pick: &dyn Fn(&ChainOutcome) -> &Vec<f64>| -> Vec<f64> {
        let len = pick(&chains[0]).len();
        (0..len)
            .map(|k| chains.iter().map(|c| weight(c) * pick(c)[k]).sum())
            .collect()
    };
    let posterior_mean = pooled(&|c| &c.eta_mean);
    let theta_mean = pooled(&|c| &c.theta_mean);
    let ess: Vec<f64> = (0..theta_mean.len())
        .map(|k| chains.iter().map(|c| c.ess[k]).sum())
        .collect();

    let mut stats = chains[0].state.stats.clone();
    for c in &chains[1..] {
        for (a, b) in stats
            .per_subdomain
            .iter_mut()
            .zip(&c.state.stats.per_subdomain)
        {
            a.proposals += b.proposals;
            a.promotions += b.promotions;
            a.acceptances += b.acceptances;
        }
        stats.fine_solves += c.state.stats.fine_solves;
        stats.coarse_solves += c.state.stats.coarse_solves;
    }
    let proposals = stats.proposals();
    let summary = DiagnosticsSummary {
        format: SUMMARY_FORMAT.into(),
        version: SUMMARY_VERSION,
        coupling: cfg.coupling.name().into(),
        mode: match cfg.sampler.mode {
            SamplerMode::SingleStage => "single-stage".into(),
            SamplerMode::TwoStage => "two-stage".into(),
        },
        chains: chains.len(),
        cycles: cfg.sampler.cycles,
        retained,
        per_subdomain: DiagnosticsSummary::rates(&stats),
        acceptance_rate: if proposals == 0 {
            0.0
        } else {
            stats.acceptances() as f64 / proposals as f64
        },
        fine_solves: stats.fine_solves,
        coarse_solves: stats.coarse_solves,
        stage1_rejections: stats.stage1_rejections(),
        ess,
        theta_mean,
        truth_correlation: Some(pearson(&posterior_mean, &problem.truth.eta_true)),
        note: problem.sampler()?.prior_diagnostic().map(str::to_string),
    };
    summary.write(&dir.join("summary.json"))?;
    write_field(
        &dir.join("posterior_mean.csv"),
        problem.partition.grid(),
        &posterior_mean,
    )?;
    Ok(RunOutcome {
        dir,
        summary,
        posterior_mean,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::output::{read_records, read_samples};

    fn small(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.n = 8;
        cfg.prior.n_c = 2;
        cfg.truth.modes = 16;
        cfg.sampler.cycles = 12;
        cfg.sampler.burn_in = 2;
        cfg.sampler.audit_every = 4;
        cfg.observations.noise_variance = 1e-2;
        cfg.output.dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn single_chain_writes_consistent_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let out = run_experiment(&cfg).unwrap();
        let samples = read_samples(&dir.path().join("samples.csv")).unwrap();
        assert_eq!(samples.theta.len(), 10);
        assert_eq!(samples.cycles.first(), Some(&3));
        let records = read_records(&dir.path().join("records.jsonl")).unwrap();
        assert_eq!(records.len(), 12 * 4);
        assert_eq!(out.summary.retained, 10);
        assert_eq!(
            out.summary
                .per_subdomain
                .iter()
                .map(|r| r.proposals)
                .sum::<u64>(),
            48
        );
        let promoted = records.iter().filter(|r| r.promoted).count() as u64;
        assert_eq!(out.summary.fine_solves, promoted);
        let restored = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(restored, cfg);
    }

    #[test]
    fn fixed_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&small(a.path())).unwrap();
        run_experiment(&small(b.path())).unwrap();
        for name in [
            "samples.csv",
            "records.jsonl",
            "data.json",
            "posterior_mean.csv",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert!(x == y, "{name} differs");
        }
    }

    #[test]
    fn parallel_chains_match_sequential_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.sampler.chains = 3;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.chains.len(), 3);
        assert_eq!(out.summary.retained, 30);
        assert!(dir.path().join("samples.chain2.csv").exists());

        let problem = Problem::new(&cfg, load_or_generate_truth(&cfg).unwrap()).unwrap();
        let seq = tempfile::tempdir().unwrap();
        let again = run_chain(&cfg, &problem, seq.path(), 1).unwrap();
        assert_eq!(again.state, out.chains[1].state);
        assert_ne!(out.chains[0].state.theta, out.chains[1].state.theta);
    }

    #[test]
    fn mismatched_data_grid_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let truth = generate_truth(&cfg).unwrap();
        let mut other = cfg.clone();
        other.grid.n = 16;
        assert!(matches!(Problem::new(&other, truth), Err(Error::Config(_))));
    }
}
