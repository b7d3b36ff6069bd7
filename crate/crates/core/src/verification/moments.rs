//! First and second moments of the generated field, estimated directly from
//! assembled fields and through the linear moment formulas.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::example1d::ExampleGeometry;
use crate::coupling::{
    assemble_global_average, assemble_uncoupled, extended_basis, CouplingKind, CouplingLayout,
    ExtendedBasis,
};
use crate::error::{Error, Result};
use crate::field::{Field, ThetaVector};
use crate::forward::Stage;
use crate::random_field::KleBasis;
use crate::samplers::{
    LogLikelihood, MsmConfig, MsmSampler, PriorHandling, Proposal, ProposalKind, SamplerMode,
};

/// Standard error of the mean of `series` from non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(series.len());
    let len = series.len() / b;
    if len == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b)
        .map(|k| series[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

/// Sample mean and covariance (divisor `n`) of θ rows.
pub fn theta_moments(samples: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let dim = samples.first().map_or(0, Vec::len);
    let mut mean = DVector::zeros(dim);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    (mean, cov)
}

/// `Σ_kl √(λ_k λ_l) Ψ_k(x1) Ψ_l(x2) C_kl`.
pub fn formula_covariance(ext: &ExtendedBasis, x1: usize, x2: usize, cov: &DMatrix<f64>) -> f64 {
    let n = ext.dim();
    let mut total = 0.0;
    for k in 0..n {
        let a = ext.sqrt_lambda[k] * ext.columns[k][x1];
        if a == 0.0 {
            continue;
        }
        for l in 0..n {
            total += a * ext.sqrt_lambda[l] * ext.columns[l][x2] * cov[(k, l)];
        }
    }
    total
}

/// `Σ_k √λ_k Ψ_k(x) m_k`.
pub fn formula_mean(ext: &ExtendedBasis, x: usize, mean: &DVector<f64>) -> f64 {
    (0..ext.dim())
        .map(|k| ext.sqrt_lambda[k] * ext.columns[k][x] * mean[k])
        .sum()
}

/// Same-subdomain covariance of the uncoupled field written as a variance sum
/// plus a cross-mode sum, for local cell indices `l1`, `l2` and the block covariance `c`.
pub fn uncoupled_same_subdomain_covariance(
    basis: &KleBasis,
    l1: usize,
    l2: usize,
    c: &DMatrix<f64>,
) -> f64 {
    let n = basis.n_c();
    let s: Vec<f64> = basis.eigenvalues.iter().map(|v| v.sqrt()).collect();
    let psi = |k: usize, l: usize| basis.modes[k][l];
    let variances: f64 = (0..n)
        .map(|k| basis.eigenvalues[k] * psi(k, l1) * psi(k, l2) * c[(k, k)])
        .sum();
    let mut cross = 0.0;
    for k in 0..n {
        for l in 0..k {
            cross += s[k] * s[l] * (psi(k, l1) * psi(l, l2) + psi(l, l1) * psi(k, l2)) * c[(k, l)];
        }
    }
    variances + cross
}

/// The three interesting covariance cases of Example A (`case` in 1..=3), using
/// the band points `p2`, `p3` and an R1 point `x1` for the first two cases.
pub fn example_a_case_covariance(
    geo: &ExampleGeometry,
    case: u8,
    x1: usize,
    var1: f64,
    var2: f64,
    cov12: f64,
) -> Result<f64> {
    let (s1, s2) = geo.sqrt_lambda();
    let (l1, l2) = (s1 * s1, s2 * s2);
    let (p2, p3) = (geo.p2, geo.p3);
    Ok(match case {
        1 => {
            0.5 * l1 * geo.psi1(x1) * geo.psi1(p2) * var1
                + 0.5 * s1 * s2 * geo.psi1(x1) * geo.psi2(p2 + 1) * cov12
        }
        2 => {
            0.5 * l1 * geo.psi1(x1) * geo.psi1(p3 - 1) * var1
                + 0.5 * s1 * s2 * geo.psi1(x1) * geo.psi2(p3) * cov12
        }
        3 => {
            0.25 * l1 * geo.psi1(p2).powi(2) * var1
                + 0.25 * l2 * geo.psi2(p3).powi(2) * var2
                + 0.5 * s1 * s2 * geo.psi1(p2) * geo.psi2(p3) * cov12
        }
        _ => {
            return Err(Error::Contract(format!(
                "Example A has cases 1 to 3, got {case}"
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEntry {
    pub x1: usize,
    pub x2: usize,
    pub direct: f64,
    pub formula: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub points: Vec<usize>,
    pub mean_direct: Vec<f64>,
    pub mean_formula: Vec<f64>,
    pub mean_standard_error: Vec<f64>,
    pub covariances: Vec<CovarianceEntry>,
    /// `max |direct − formula|` over means and covariances.
    pub mean_discrepancy: f64,
    pub covariance_discrepancy: f64,
}

impl MomentReport {
    pub fn covariance(&self, x1: usize, x2: usize) -> Option<&CovarianceEntry> {
        self.covariances
            .iter()
            .find(|e| (e.x1, e.x2) == (x1, x2) || (e.x1, e.x2) == (x2, x1))
    }
}

fn assemble(
    kind: &CouplingKind,
    theta: &ThetaVector,
    bases: &[KleBasis],
    layout: &CouplingLayout,
) -> Result<Field> {
    match kind {
        CouplingKind::Uncoupled => assemble_uncoupled(theta, bases, layout),
        CouplingKind::GlobalAverage { .. } => assemble_global_average(theta, bases, layout),
        CouplingKind::LocalAverage { .. } => Err(Error::Unsupported(
            "no linear moment formula exists for local averaging".into(),
        )),
    }
}

/// Compare moments of the assembled fields with the formulas in terms of the θ moments.
pub fn posterior_moment_check(
    samples: &[Vec<f64>],
    kind: &CouplingKind,
    bases: &[KleBasis],
    layout: &CouplingLayout,
    pairs: &[(usize, usize)],
) -> Result<MomentReport> {
    if !kind.is_linear() {
        return Err(Error::Unsupported(
            "no linear moment formula exists for local averaging".into(),
        ));
    }
    if samples.len() < 2 {
        return Err(Error::Contract(
            "moment checks need at least two samples".into(),
        ));
    }
    let n_c = bases.first().map_or(1, KleBasis::n_c);
    let mut points: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    points.sort_unstable();
    points.dedup();

    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); points.len()];
    for s in samples {
        let eta = assemble(kind, &ThetaVector::new(s.clone(), n_c)?, bases, layout)?;
        for (v, &p) in values.iter_mut().zip(&points) {
            v.push(eta.values[p]);
        }
    }
    let n = samples.len() as f64;
    let mean_direct: Vec<f64> = values.iter().map(|v| v.iter().sum::<f64>() / n).collect();
    let mean_standard_error = values.iter().map(|v| batch_means_se(v, 50)).collect();

    let ext = extended_basis(kind, bases, layout)?;
    let (tm, tc) = theta_moments(samples);
    let mean_formula: Vec<f64> = points.iter().map(|&p| formula_mean(&ext, p, &tm)).collect();

    let pos = |p: usize| points.binary_search(&p).expect("point collected above");
    let covariances: Vec<CovarianceEntry> = pairs
        .iter()
        .map(|&(x1, x2)| {
            let (i, j) = (pos(x1), pos(x2));
            let products: Vec<f64> = values[i]
                .iter()
                .zip(&values[j])
                .map(|(a, b)| (a - mean_direct[i]) * (b - mean_direct[j]))
                .collect();
            CovarianceEntry {
                x1,
                x2,
                direct: products.iter().sum::<f64>() / n,
                formula: formula_covariance(&ext, x1, x2, &tc),
                standard_error: batch_means_se(&products, 50),
            }
        })
        .collect();

    let mean_discrepancy = mean_direct
        .iter()
        .zip(&mean_formula)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let covariance_discrepancy = covariances
        .iter()
        .map(|e| (e.direct - e.formula).abs())
        .fold(0.0, f64::max);
    Ok(MomentReport {
        points,
        mean_direct,
        mean_formula,
        mean_standard_error,
        covariances,
        mean_discrepancy,
        covariance_discrepancy,
    })
}

/// Noisy point observations of the field itself: `−Σ (η(x_o) − d_o)² / σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointObservations {
    pub points: Vec<usize>,
    pub data: Vec<f64>,
    pub noise_variance: f64,
}

impl LogLikelihood for PointObservations {
    fn log_likelihood(&self, eta: &Field, _stage: Stage) -> Result<f64> {
        Ok(-self
            .points
            .iter()
            .zip(&self.data)
            .map(|(&p, d)| (eta.values[p] - d).powi(2))
            .sum::<f64>()
            / self.noise_variance)
    }
}

/// Exact Gaussian posterior on θ for point observations of a linear coupling.
pub fn gaussian_posterior(
    ext: &ExtendedBasis,
    obs: &PointObservations,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = ext.dim();
    let mut precision = DMatrix::identity(n, n);
    let mut rhs = DVector::zeros(n);
    let scale = 2.0 / obs.noise_variance;
    for (&p, &d) in obs.points.iter().zip(&obs.data) {
        let w = DVector::from_iterator(n, (0..n).map(|k| ext.sqrt_lambda[k] * ext.columns[k][p]));
        precision += scale * &w * w.transpose();
        rhs += scale * d * &w;
    }
    let cov = precision
        .try_inverse()
        .ok_or_else(|| Error::Invariant("posterior precision is singular".into()))?;
    let mean = &cov * rhs;
    Ok((mean, cov))
}

/// θ samples (one per Gibbs cycle) of the globally averaged Example-A chain.
pub fn example_a_chain(
    geo: &ExampleGeometry,
    obs: &PointObservations,
    cycles: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let layout = geo.layout_a();
    let config = MsmConfig {
        coupling: CouplingKind::GlobalAverage {
            ellipse: Default::default(),
        },
        proposal: Proposal::new(ProposalKind::Pcn, 0.8)?,
        mode: SamplerMode::SingleStage,
        prior_handling: PriorHandling::Explicit,
    };
    let sampler = MsmSampler::new(config, &geo.bases, &layout, obs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = sampler.init(geo.theta(0.0, 0.0))?;
    let mut out = Vec::with_capacity(cycles);
    for c in 0..burn_in + cycles {
        sampler.cycle(&mut state, &mut rng)?;
        if c >= burn_in {
            out.push(state.theta.as_slice().to_vec());
        }
    }
    Ok(out)
}

/// Observations used by the Example-A posterior studies.
pub fn example_a_observations(geo: &ExampleGeometry) -> PointObservations {
    PointObservations {
        points: vec![geo.p2, geo.p3],
        data: vec![0.8, -0.3],
        noise_variance: 0.5,
    }
}

/// Pairs covering Example-A cases 1 to 3 and a same-subdomain pair.
pub fn example_a_pairs(geo: &ExampleGeometry) -> Vec<(usize, usize)> {
    vec![(0, geo.p2), (0, geo.p3), (geo.p2, geo.p3), (0, 1)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub short: usize,
    pub long: usize,
    pub replicates: usize,
    pub rms_short: f64,
    pub rms_long: f64,
}

impl ScalingReport {
    pub fn ratio(&self) -> f64 {
        self.rms_short / self.rms_long
    }
}

/// RMS covariance error against the exact posterior over independent replicate
/// chains at lengths `short` and `4·short`.
pub fn moment_error_scaling(
    geo: &ExampleGeometry,
    short: usize,
    replicates: usize,
    seed: u64,
) -> Result<ScalingReport> {
    let obs = example_a_observations(geo);
    let kind = CouplingKind::GlobalAverage {
        ellipse: Default::default(),
    };
    let layout = geo.layout_a();
    let ext = extended_basis(&kind, &geo.bases, &layout)?;
    let (_, exact) = gaussian_posterior(&ext, &obs)?;
    let pairs = example_a_pairs(geo);
    let reference: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| formula_covariance(&ext, a, b, &exact))
        .collect();

    let sq_error = |len: usize, rep: usize| -> Result<f64> {
        let s = example_a_chain(
            geo,
            &obs,
            len,
            200,
            seed.wrapping_add((len as u64) << 20)
                .wrapping_add(rep as u64),
        )?;
        let r = posterior_moment_check(&s, &kind, &geo.bases, &layout, &pairs)?;
        Ok(r.covariances
            .iter()
            .zip(&reference)
            .map(|(e, t)| (e.direct - t).powi(2))
            .sum::<f64>())
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(replicates.max(1));
    let rms = |len: usize| -> Result<f64> {
        let totals: Vec<Result<f64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let sq_error = &sq_error;
                    scope.spawn(move || -> Result<f64> {
                        (w..replicates)
                            .step_by(workers)
                            .map(|r| sq_error(len, r))
                            .sum()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replicate worker panicked"))
                .collect()
        });
        let total: f64 = totals.into_iter().sum::<Result<f64>>()?;
        Ok((total / (replicates * pairs.len()) as f64).sqrt())
    };
    Ok(ScalingReport {
        short,
        long: 4 * short,
        replicates,
        rms_short: rms(short)?,
        rms_long: rms(4 * short)?,
    })
}
