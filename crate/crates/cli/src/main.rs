//! `msm`: synthetic data, sampling runs, verification checks and summaries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msm_core::coupling::{CouplingKind, EllipseFractions};
use msm_core::experiment::diagnostics::effective_sample_size;
use msm_core::experiment::{
    generate_truth, output_dir, read_samples, run_experiment, DiagnosticsSummary, ExperimentConfig,
};
use msm_core::samplers::{PriorHandling, ProposalKind, SamplerMode};
use msm_core::verification::{format_table, run_suite};
use msm_core::Error;

const VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "msm",
    version,
    about = "Multiscale sampling for Bayesian permeability inversion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a true field, solve and write noisy sensor data.
    GenerateTruth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Data file to write (default: <output dir>/data.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured chains and write samples, records and a summary.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run verification checks and print a pass/fail table.
    Verify {
        /// "all" (fast checks), "full" (every check) or a comma-separated list.
        #[arg(default_value = "all")]
        selector: String,
    },
    /// Print the summary of a finished run.
    Summarize {
        /// Output directory of the run.
        dir: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Uncoupled,
    GlobalAverage,
    LocalAverage,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProposalArg {
    Pcn,
    RandomWalk,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    SingleStage,
    TwoStage,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Explicit,
    Cancelled,
}

/// A TOML file plus per-field overrides.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    coarsening: Option<usize>,
    #[arg(long)]
    mc_x: Option<usize>,
    #[arg(long)]
    mc_y: Option<usize>,
    #[arg(long)]
    hbar_cells: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    lx: Option<f64>,
    #[arg(long)]
    ly: Option<f64>,
    #[arg(long)]
    n_c: Option<usize>,
    #[arg(long, value_enum)]
    coupling: Option<CouplingArg>,
    #[arg(long)]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long, value_enum)]
    proposal: Option<ProposalArg>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    prior_handling: Option<PriorArg>,
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    audit_every: Option<u64>,
    /// Sensors per side of the interior lattice.
    #[arg(long)]
    sensors: Option<usize>,
    #[arg(long)]
    noise_variance: Option<f64>,
    /// Existing data file to invert instead of generating truth.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    truth_modes: Option<usize>,
    #[arg(long)]
    truth_seed: Option<u64>,
    /// Output directory; relative paths resolve against MSM_OUTPUT_ROOT.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    kle_cache: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        set(&mut cfg.grid.n, &self.n);
        set(&mut cfg.grid.coarsening, &self.coarsening);
        set(&mut cfg.partition.mc_x, &self.mc_x);
        set(&mut cfg.partition.mc_y, &self.mc_y);
        set(&mut cfg.partition.hbar_cells, &self.hbar_cells);
        set(&mut cfg.prior.sigma2, &self.sigma2);
        set(&mut cfg.prior.lx, &self.lx);
        set(&mut cfg.prior.ly, &self.ly);
        set(&mut cfg.prior.n_c, &self.n_c);
        let mut ellipse = cfg.coupling.ellipse().unwrap_or_default();
        set(&mut ellipse.fx, &self.fx);
        set(&mut ellipse.fy, &self.fy);
        cfg.coupling = match self.coupling {
            Some(CouplingArg::Uncoupled) => CouplingKind::Uncoupled,
            Some(CouplingArg::GlobalAverage) => CouplingKind::GlobalAverage { ellipse },
            Some(CouplingArg::LocalAverage) => CouplingKind::LocalAverage { ellipse },
            None => with_ellipse(cfg.coupling, ellipse),
        };
        if let Some(p) = self.proposal {
            cfg.sampler.proposal = match p {
                ProposalArg::Pcn => ProposalKind::Pcn,
                ProposalArg::RandomWalk => ProposalKind::RandomWalk,
            };
        }
        set(&mut cfg.sampler.beta, &self.beta);
        if let Some(m) = self.mode {
            cfg.sampler.mode = match m {
                ModeArg::SingleStage => SamplerMode::SingleStage,
                ModeArg::TwoStage => SamplerMode::TwoStage,
            };
        }
        if let Some(p) = self.prior_handling {
            cfg.sampler.prior_handling = match p {
                PriorArg::Explicit => PriorHandling::Explicit,
                PriorArg::Cancelled => PriorHandling::Cancelled,
            };
        }
        set(&mut cfg.sampler.cycles, &self.cycles);
        set(&mut cfg.sampler.burn_in, &self.burn_in);
        set(&mut cfg.sampler.seed, &self.seed);
        set(&mut cfg.sampler.chains, &self.chains);
        set(&mut cfg.sampler.audit_every, &self.audit_every);
        set(&mut cfg.observations.sensors, &self.sensors);
        set(&mut cfg.observations.noise_variance, &self.noise_variance);
        if self.data.is_some() {
            cfg.observations.data = self.data.clone();
        }
        set(&mut cfg.truth.modes, &self.truth_modes);
        set(&mut cfg.truth.seed, &self.truth_seed);
        set(&mut cfg.output.dir, &self.output_dir);
        if self.kle_cache.is_some() {
            cfg.output.kle_cache = self.kle_cache.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn with_ellipse(kind: CouplingKind, ellipse: EllipseFractions) -> CouplingKind {
    match kind {
        CouplingKind::Uncoupled => CouplingKind::Uncoupled,
        CouplingKind::GlobalAverage { .. } => CouplingKind::GlobalAverage { ellipse },
        CouplingKind::LocalAverage { .. } => CouplingKind::LocalAverage { ellipse },
    }
}

fn summarize(dir: &Path) -> Result<String, Error> {
    let summary = DiagnosticsSummary::read(&dir.join("summary.json"))?;
    let mut out = summary.table();
    let samples = dir.join("samples.csv");
    if samples.exists() {
        let table = read_samples(&samples)?;
        out.push_str(&format!(
            "{} samples of dimension {}\n",
            table.theta.len(),
            table.dim()
        ));
        out.push_str("coord      mean       ESS\n");
        for k in 0..table.dim() {
            let col = table.column(k);
            let mean = col.iter().sum::<f64>() / col.len().max(1) as f64;
            out.push_str(&format!(
                "{k:>5}  {mean:>9.4}  {:>8.1}\n",
                effective_sample_size(&col)
            ));
        }
    }
    Ok(out)
}

fn execute(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::GenerateTruth { config, out } => {
            let cfg = config.resolve()?;
            let truth = generate_truth(&cfg)?;
            let path = match out {
                Some(p) => p,
                None => {
                    let dir = output_dir(&cfg);
                    std::fs::create_dir_all(&dir)?;
                    dir.join("data.json")
                }
            };
            truth.write(&path)?;
            println!("wrote {} ({} sensors)", path.display(), truth.sensors.len());
        }
        Command::Run { config } => {
            let cfg = config.resolve()?;
            let outcome = run_experiment(&cfg)?;
            print!("{}", outcome.summary.table());
            println!("artifacts in {}", outcome.dir.display());
        }
        Command::Verify { selector } => {
            let outcomes = run_suite(&selector)?;
            print!("{}", format_table(&outcomes));
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::from(VERIFY_FAILED));
            }
        }
        Command::Summarize { dir } => print!("{}", summarize(&dir)?),
        Command::Config { config } => print!("{}", config.resolve()?.to_toml_string()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
