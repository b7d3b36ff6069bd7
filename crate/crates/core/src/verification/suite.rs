//! Named checks with a pass/fail table.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conditions::{condition7_probe, condition_audit, toy_log_target};
use super::discrete::{
    condition5_counterexample, detailed_balance_residual, exact_mh_kernel, exact_two_stage_kernel,
    fixed_point_residual, max_row_sum_error, stationary_power, stationary_solve, total_variation,
    DiscreteChainSpec,
};
use super::example1d::{
    example_ab_check, local_average_history_demo, ExampleGeometry, HistoryDraws,
};
use super::identities::{
    effective_support_contains_proposal, pcn_ratio_identity_check, rho_identity_check,
    RhoIdentityReport,
};
use super::moments::{
    example_a_case_covariance, example_a_chain, example_a_observations, example_a_pairs,
    formula_covariance, gaussian_posterior, moment_error_scaling, posterior_moment_check,
    theta_moments,
};
use super::prior_on_v::prior_on_v_check;
use crate::coupling::{extended_basis, CouplingKind, CouplingLayout};
use crate::error::{Error, Result};
use crate::field::ThetaVector;
use crate::forward::{observe, sensor_lattice, LikelihoodPair, ObservationModel};
use crate::grid::{Grid, SubdomainPartition};
use crate::random_field::{local_kle_all, sample_prior_theta, CovarianceParams};
use crate::samplers::{
    FlatLikelihood, MsmConfig, MsmSampler, PriorHandling, Proposal, ProposalKind, SamplerMode,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Extra multi-line output, such as the history table.
    pub table: Option<String>,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
            table: None,
        }
    }
}

type CheckFn = fn() -> Result<CheckOutcome>;

/// Checks run by `all`, in order. Slow checks are listed in [`SLOW_CHECKS`].
pub const FAST_CHECKS: &[(&str, CheckFn)] = &[
    ("pcn-identity", check_pcn_identity),
    ("rho-identity", check_rho_identity),
    ("mh-kernel", check_mh_kernel),
    ("two-stage-kernel", check_two_stage_kernel),
    ("condition5-counterexample", check_condition5_counterexample),
    ("example-ab", check_example_ab),
    ("local-average-history", check_local_average_history),
    ("prior-on-v", check_prior_on_v),
    ("conditions", check_conditions),
    ("condition7-probe", check_condition7_probe),
    ("posterior-moments", check_posterior_moments),
];

pub const SLOW_CHECKS: &[(&str, CheckFn)] = &[
    ("moment-scaling", check_moment_scaling),
    ("prior-recovery", check_prior_recovery),
];

pub fn check_names() -> Vec<&'static str> {
    FAST_CHECKS
        .iter()
        .chain(SLOW_CHECKS)
        .map(|(n, _)| *n)
        .collect()
}

/// Run checks selected by a comma-separated list; `all` runs the fast checks,
/// `full` runs every check.
pub fn run_suite(selector: &str) -> Result<Vec<CheckOutcome>> {
    let mut selected: Vec<(&str, CheckFn)> = Vec::new();
    for name in selector.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "all" => selected.extend(FAST_CHECKS),
            "full" => selected.extend(FAST_CHECKS.iter().chain(SLOW_CHECKS)),
            other => {
                let found = FAST_CHECKS
                    .iter()
                    .chain(SLOW_CHECKS)
                    .find(|(n, _)| *n == other)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown check {other:?}; known: {}",
                            check_names().join(", ")
                        ))
                    })?;
                selected.push(*found);
            }
        }
    }
    if selected.is_empty() {
        return Err(Error::Config("no checks selected".into()));
    }
    Ok(selected
        .into_iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}")))
        })
        .collect())
}

pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let mut out = String::new();
    let width = outcomes
        .iter()
        .map(|o| o.name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = writeln!(out, "{:<width$}  {:<6}  detail", "check", "result");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{:<width$}  {:<6}  {}",
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if let Some(t) = &o.table {
            for line in t.lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let _ = writeln!(out, "{} checks, {} failed", outcomes.len(), failed);
    out
}

pub fn check_pcn_identity() -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for beta in [0.1, 0.5, 0.9] {
        worst = worst.max(pcn_ratio_identity_check(10_000, beta, 8, &mut rng)?);
    }
    Ok(CheckOutcome::new(
        "pcn-identity",
        worst < 1e-10,
        format!("max deviation {worst:.2e} (tol 1e-10)"),
    ))
}

pub fn check_rho_identity() -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut total = RhoIdentityReport::default();
    let mut support = true;
    for _ in 0..50 {
        let spec = DiscreteChainSpec::random(5, true, &mut rng);
        total = total.merge(rho_identity_check(&spec)?);
        support &= effective_support_contains_proposal(&spec)?;
    }
    let passed = total.max_deviation < 1e-12 && total.both_branches() && support;
    Ok(CheckOutcome::new(
        "rho-identity",
        passed,
        format!(
            "{} pairs, max deviation {:.2e} (tol 1e-12), branches g<1: {}, g=1: {}",
            total.pairs,
            total.max_deviation,
            total.branch_promotion_below_one,
            total.branch_promotion_one
        ),
    ))
}

pub fn check_mh_kernel() -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut fixed, mut balance, mut rows, mut agree) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for m in 2..=8 {
        let spec = DiscreteChainSpec::random(m, false, &mut rng);
        let k = exact_mh_kernel(&spec);
        fixed = fixed.max(fixed_point_residual(&spec.f, &k));
        balance = balance.max(detailed_balance_residual(&spec.f, &k));
        rows = rows.max(max_row_sum_error(&k));
        let a = stationary_power(&k, &vec![1.0; m], 1e-15, 200_000);
        agree = agree.max((a - stationary_solve(&k)?).amax());
    }
    let passed = fixed < 1e-12 && balance < 1e-12 && rows < 1e-14 && agree < 1e-10;
    Ok(CheckOutcome::new(
        "mh-kernel",
        passed,
        format!(
            "fK-f {fixed:.1e}, balance {balance:.1e}, rows {rows:.1e}, power/solve {agree:.1e}"
        ),
    ))
}

pub fn check_two_stage_kernel() -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut fixed, mut rows, mut agree) = (0.0f64, 0.0f64, 0.0f64);
    for m in 2..=8 {
        let spec = DiscreteChainSpec::random(m, true, &mut rng);
        spec.check_condition5()?;
        let k = exact_two_stage_kernel(&spec)?.matrix;
        fixed = fixed.max(fixed_point_residual(&spec.f, &k));
        rows = rows.max(max_row_sum_error(&k));
        let a = stationary_power(&k, &vec![1.0; m], 1e-15, 200_000);
        agree = agree.max((a - stationary_solve(&k)?).amax());
    }
    let passed = fixed < 1e-12 && rows < 1e-14 && agree < 1e-10;
    Ok(CheckOutcome::new(
        "two-stage-kernel",
        passed,
        format!("fK-f {fixed:.1e}, rows {rows:.1e}, power/solve {agree:.1e}"),
    ))
}

pub fn check_condition5_counterexample() -> Result<CheckOutcome> {
    let spec = condition5_counterexample();
    let diagnosed = spec.check_condition5().is_err();
    let k = exact_two_stage_kernel(&spec)?;
    let start = spec.f_c.clone().unwrap_or_default();
    let pi = stationary_power(&k.matrix, &start, 1e-15, 200_000);
    let tv = total_variation(pi.as_slice(), &spec.f);
    Ok(CheckOutcome::new(
        "condition5-counterexample",
        diagnosed && tv > 1e-3,
        format!(
            "violations {:?} diagnosed: {diagnosed}, TV(stationary, f) = {tv:.4} (must exceed 1e-3)",
            k.condition5_violations
        ),
    ))
}

pub fn check_example_ab() -> Result<CheckOutcome> {
    let geo = ExampleGeometry::default_example();
    let r = example_ab_check(&geo, &[(1.0, 0.0), (0.0, 1.0), (0.37, -1.2), (-2.1, 0.65)])?;
    Ok(CheckOutcome::new(
        "example-ab",
        r.max_error() < 1e-12,
        format!(
            "A: field {:.1e}, basis {:.1e}; B: field {:.1e}, basis {:.1e} (tol 1e-12)",
            r.a_field_error, r.a_basis_error, r.b_field_error, r.b_basis_error
        ),
    ))
}

pub fn check_local_average_history() -> Result<CheckOutcome> {
    let geo = ExampleGeometry::default_example();
    let r = local_average_history_demo(&geo, HistoryDraws::default())?;
    let mut o = CheckOutcome::new(
        "local-average-history",
        r.passed(),
        format!(
            "{} fields, max error {:.1e}, fit residual {:.1e}, span rank {}",
            r.rows.len(),
            r.max_error(),
            r.span.max_residual,
            r.span.rank
        ),
    );
    o.table = Some(r.table());
    Ok(o)
}

fn small_problem() -> Result<(SubdomainPartition, CovarianceParams)> {
    let part = SubdomainPartition::new(Grid::new(16)?, 2, 2, 1)?;
    Ok((part, CovarianceParams::new(1.0, 0.25, 0.25)?))
}

pub fn check_prior_on_v() -> Result<CheckOutcome> {
    let (part, params) = small_problem()?;
    let bases = local_kle_all(&part, &params, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut thetas: Vec<ThetaVector> = (0..50)
        .map(|_| sample_prior_theta(&mut rng, 4, 4))
        .collect();
    thetas.push(ThetaVector::zeros(4, 4));
    let mut worst: f64 = 0.0;
    for kind in [
        CouplingKind::Uncoupled,
        CouplingKind::GlobalAverage {
            ellipse: Default::default(),
        },
    ] {
        let layout = CouplingLayout::for_kind(&part, &kind, params.lx, params.ly);
        worst = worst.max(prior_on_v_check(&kind, &bases, &layout, &thetas)?.max_log_density_error);
    }
    let local = CouplingKind::LocalAverage {
        ellipse: Default::default(),
    };
    let layout = CouplingLayout::for_kind(&part, &local, params.lx, params.ly);
    let refused = matches!(
        prior_on_v_check(&local, &bases, &layout, &thetas),
        Err(Error::NotOneToOne(_))
    );
    Ok(CheckOutcome::new(
        "prior-on-v",
        worst < 1e-10 && refused,
        format!("round-trip log-density error {worst:.1e} (tol 1e-10), local-average refused: {refused}"),
    ))
}

pub fn check_conditions() -> Result<CheckOutcome> {
    let grid = Grid::new(8)?;
    let part = SubdomainPartition::new(grid, 2, 2, 1)?;
    let params = CovarianceParams::new(1.0, 0.3, 0.3)?;
    let bases = local_kle_all(&part, &params, 2)?;
    let kind = CouplingKind::GlobalAverage {
        ellipse: Default::default(),
    };
    let layout = CouplingLayout::for_kind(&part, &kind, params.lx, params.ly);
    let sensors = sensor_lattice(3);
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let truth = crate::coupling::assemble_global_average(
        &sample_prior_theta(&mut rng, 4, 2),
        &bases,
        &layout,
    )?;
    let p = crate::forward::EllipticProblem::new(grid).solve(&truth.exp())?;
    let data = observe(&p, grid, &sensors)?;
    let pair = LikelihoodPair::new(grid, 2, ObservationModel::new(sensors, data, 1e-3)?)?;
    let config = MsmConfig {
        coupling: kind,
        proposal: Proposal::new(ProposalKind::Pcn, 0.5)?,
        mode: SamplerMode::TwoStage,
        prior_handling: PriorHandling::Explicit,
    };
    let sampler = MsmSampler::new(config, &bases, &layout, &pair)?;
    let mut state = sampler.init(ThetaVector::zeros(4, 2))?;
    for _ in 0..30 {
        sampler.cycle(&mut state, &mut rng)?;
    }
    sampler.audit(&state)?;
    let audit = condition_audit(&sampler, &state.stats, 30, &mut rng)?;
    Ok(CheckOutcome::new(
        "conditions",
        audit.passed(),
        format!(
            "target finite: {}, proposal positive: {}, rejections: {} of {}",
            audit.target_finite,
            audit.proposal_positive,
            state.stats.proposals() - state.stats.acceptances(),
            state.stats.proposals()
        ),
    ))
}

pub fn check_condition7_probe() -> Result<CheckOutcome> {
    let lines = condition7_probe(toy_log_target, &[-3.0, -1.0, 0.0, 0.5, 2.0]);
    let ok = lines
        .iter()
        .all(|l| l.integral.is_finite() && l.integral > 0.0 && l.window_change < 1e-8);
    let smallest = lines
        .iter()
        .map(|l| l.integral)
        .fold(f64::INFINITY, f64::min);
    Ok(CheckOutcome::new(
        "condition7-probe",
        ok,
        format!(
            "{} hyperplane integrals finite and window-stable (smallest {smallest:.3e})",
            lines.len()
        ),
    ))
}

pub fn check_posterior_moments() -> Result<CheckOutcome> {
    let geo = ExampleGeometry::default_example();
    let obs = example_a_observations(&geo);
    let kind = CouplingKind::GlobalAverage {
        ellipse: Default::default(),
    };
    let layout = geo.layout_a();
    let pairs = example_a_pairs(&geo);
    let samples = example_a_chain(&geo, &obs, 100_000, 1000, 107)?;
    let r = posterior_moment_check(&samples, &kind, &geo.bases, &layout, &pairs)?;
    let ext = extended_basis(&kind, &geo.bases, &layout)?;
    let (_, exact) = gaussian_posterior(&ext, &obs)?;
    let (_, c) = theta_moments(&samples);

    let mut worst_z: f64 = 0.0;
    for e in &r.covariances {
        let reference = formula_covariance(&ext, e.x1, e.x2, &exact);
        worst_z = worst_z.max((e.direct - reference).abs() / e.standard_error);
    }
    let mut closed: f64 = 0.0;
    for (case, (x1, x2)) in [(1u8, pairs[0]), (2, pairs[1]), (3, pairs[2])] {
        let v = example_a_case_covariance(&geo, case, x1, c[(0, 0)], c[(1, 1)], c[(0, 1)])?;
        let direct = r.covariance(x1, x2).map_or(f64::NAN, |e| e.direct);
        closed = closed.max((v - direct).abs());
    }
    let passed = worst_z < 3.0 && closed < 1e-12 && r.covariance_discrepancy < 1e-12;
    Ok(CheckOutcome::new(
        "posterior-moments",
        passed,
        format!(
            "formula vs direct {:.1e}, cases 1-3 {closed:.1e}, max |direct - exact| / se = {worst_z:.2} (< 3)",
            r.covariance_discrepancy
        ),
    ))
}

pub fn check_moment_scaling() -> Result<CheckOutcome> {
    let geo = ExampleGeometry::default_example();
    let r = moment_error_scaling(&geo, 4000, 160, 108)?;
    let ratio = r.ratio();
    Ok(CheckOutcome::new(
        "moment-scaling",
        (1.5..=2.7).contains(&ratio),
        format!(
            "rms error {:.3e} at n={} and {:.3e} at n={}, ratio {ratio:.3} (in [1.5, 2.7])",
            r.rms_short, r.short, r.rms_long, r.long
        ),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorRecoveryReport {
    pub cycles: usize,
    pub max_mean_error: f64,
    pub max_variance_error: f64,
}

/// Sample the prior with the likelihood switched off and compare θ moments with N(0, 1).
pub fn prior_recovery(kind: CouplingKind, cycles: usize, seed: u64) -> Result<PriorRecoveryReport> {
    let (part, params) = small_problem()?;
    let bases = local_kle_all(&part, &params, 4)?;
    let layout = CouplingLayout::for_kind(&part, &kind, params.lx, params.ly);
    let config = MsmConfig {
        coupling: kind,
        proposal: Proposal::new(ProposalKind::Pcn, 0.5)?,
        mode: SamplerMode::TwoStage,
        prior_handling: PriorHandling::Explicit,
    };
    let sampler = MsmSampler::new(config, &bases, &layout, &FlatLikelihood)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sampler.init(ThetaVector::zeros(4, 4))?;
    let dim = state.theta.len();
    let (mut s1, mut s2) = (vec![0.0; dim], vec![0.0; dim]);
    for _ in 0..cycles {
        sampler.cycle(&mut state, &mut rng)?;
        for (k, v) in state.theta.as_slice().iter().enumerate() {
            s1[k] += v;
            s2[k] += v * v;
        }
    }
    let n = cycles as f64;
    let mut report = PriorRecoveryReport {
        cycles,
        max_mean_error: 0.0,
        max_variance_error: 0.0,
    };
    for k in 0..dim {
        let m = s1[k] / n;
        let v = s2[k] / n - m * m;
        report.max_mean_error = report.max_mean_error.max(m.abs());
        report.max_variance_error = report.max_variance_error.max((v - 1.0).abs());
    }
    Ok(report)
}

pub fn check_prior_recovery() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (kind, seed) in [
        (CouplingKind::Uncoupled, 109),
        (
            CouplingKind::GlobalAverage {
                ellipse: Default::default(),
            },
            110,
        ),
    ] {
        let name = kind.name();
        let r = prior_recovery(kind, 200_000, seed)?;
        worst = worst.max(r.max_mean_error).max(r.max_variance_error);
        parts.push(format!(
            "{name}: mean {:.3}, var {:.3}",
            r.max_mean_error, r.max_variance_error
        ));
    }
    Ok(CheckOutcome::new(
        "prior-recovery",
        worst < 0.05,
        format!("{} (tol 0.05)", parts.join("; ")),
    ))
}
