//! Squared-exponential Gaussian prior and its per-subdomain Karhunen-Loève bases.
//!
//! Eigenfunctions are normalized under the discrete, cell-area weighted L²
//! inner product: `Σ_k w ψ_j(x_k) ψ_l(x_k) = δ_jl` with `w` the cell area
//! (cell width in 1D).

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ThetaVector;
use crate::grid::{Grid, Grid1D, SubdomainPartition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    /// Prior variance of the log-permeability.
    pub sigma2: f64,
    pub lx: f64,
    pub ly: f64,
}

impl CovarianceParams {
    pub fn new(sigma2: f64, lx: f64, ly: f64) -> Result<Self> {
        let p = Self { sigma2, lx, ly };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.lx > 0.0 && self.ly > 0.0) {
            return Err(Error::Config(format!(
                "covariance parameters must be positive (sigma2 = {}, lx = {}, ly = {})",
                self.sigma2, self.lx, self.ly
            )));
        }
        Ok(())
    }
}

/// `σ² exp(−|Δx|²/(2L_x²) − |Δy|²/(2L_y²))`.
pub fn covariance_kernel(p1: [f64; 2], p2: [f64; 2], params: &CovarianceParams) -> f64 {
    let dx = p1[0] - p2[0];
    let dy = p1[1] - p2[1];
    params.sigma2
        * (-(dx * dx) / (2.0 * params.lx * params.lx) - (dy * dy) / (2.0 * params.ly * params.ly))
            .exp()
}

/// Nyström matrix `w · R(x_j, x_k)` over a point set with uniform weight `w`.
pub fn discrete_covariance(
    points: &[[f64; 2]],
    weight: f64,
    params: &CovarianceParams,
) -> DMatrix<f64> {
    let m = points.len();
    DMatrix::from_fn(m, m, |r, c| {
        weight * covariance_kernel(points[r], points[c], params)
    })
}

/// Truncated local Karhunen-Loève basis of one subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KleBasis {
    pub subdomain: usize,
    /// Descending, strictly positive.
    pub eigenvalues: Vec<f64>,
    /// `modes[j][k]` is `ψ_j` at the `k`-th cell of the subdomain.
    pub modes: Vec<Vec<f64>>,
    /// Quadrature weight of each cell (cell area, or cell width in 1D).
    pub weight: f64,
}

impl KleBasis {
    pub fn n_c(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cell_count(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    /// Local expansion `Σ_j √λ_j θ_j ψ_j` on the subdomain cells.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cell_count()];
        for ((lambda, mode), &t) in self.eigenvalues.iter().zip(&self.modes).zip(coeffs) {
            let a = lambda.sqrt() * t;
            for (o, &psi) in out.iter_mut().zip(mode) {
                *o += a * psi;
            }
        }
        out
    }

    /// Discrete L² inner product of two modes.
    pub fn inner(&self, j: usize, l: usize) -> f64 {
        self.weight
            * self.modes[j]
                .iter()
                .zip(&self.modes[l])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }
}

/// Top-`n_c` eigenpairs of the Nyström-discretized covariance over `points`.
///
/// Eigenvectors are flipped so that their first non-negligible component is positive.
pub fn kle_on_points(
    subdomain: usize,
    points: &[[f64; 2]],
    weight: f64,
    params: &CovarianceParams,
    n_c: usize,
) -> Result<KleBasis> {
    params.validate()?;
    if n_c == 0 || n_c > points.len() {
        return Err(Error::Config(format!(
            "n_c = {n_c} must be between 1 and the subdomain cell count {}",
            points.len()
        )));
    }
    let matrix = discrete_covariance(points, weight, params);
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lambda_max = eig.eigenvalues[order[0]];
    let cutoff = lambda_max.abs() * f64::EPSILON * points.len() as f64;
    let usable = order
        .iter()
        .take_while(|&&k| eig.eigenvalues[k] > cutoff)
        .count();

    let scale = 1.0 / weight.sqrt();
    let mut eigenvalues = Vec::with_capacity(n_c);
    let mut modes = Vec::with_capacity(n_c);
    for (rank, &k) in order.iter().take(n_c).enumerate() {
        let value = eig.eigenvalues[k];
        if value <= cutoff {
            return Err(Error::NumericalRank {
                index: rank,
                value,
                usable,
            });
        }
        let v = eig.eigenvectors.column(k);
        let vmax = v.amax();
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-8 * vmax)
            .map_or(1.0, |x| x.signum());
        eigenvalues.push(value);
        modes.push(v.iter().map(|x| sign * scale * x).collect());
    }
    Ok(KleBasis {
        subdomain,
        eigenvalues,
        modes,
        weight,
    })
}

/// Local KLE on subdomain `i` of a 2D partition.
pub fn local_kle(
    partition: &SubdomainPartition,
    i: usize,
    params: &CovarianceParams,
    n_c: usize,
) -> Result<KleBasis> {
    let grid = partition.grid();
    let points: Vec<[f64; 2]> = partition
        .cells_of(i)
        .iter()
        .map(|&c| grid.center(c))
        .collect();
    kle_on_points(i, &points, grid.cell_area(), params, n_c)
}

/// Local bases for every subdomain, in subdomain order.
pub fn local_kle_all(
    partition: &SubdomainPartition,
    params: &CovarianceParams,
    n_c: usize,
) -> Result<Vec<KleBasis>> {
    (0..partition.count())
        .map(|i| local_kle(partition, i, params, n_c))
        .collect()
}

/// KLE over the whole, undecomposed domain.
pub fn global_kle(grid: Grid, params: &CovarianceParams, n_c: usize) -> Result<KleBasis> {
    kle_on_points(0, &grid.centers(), grid.cell_area(), params, n_c)
}

/// Local KLE on subdomain `i` of the 1D two-subdomain geometry (points on the x axis).
pub fn local_kle_1d(
    grid: &Grid1D,
    i: usize,
    params: &CovarianceParams,
    n_c: usize,
) -> Result<KleBasis> {
    let points: Vec<[f64; 2]> = (0..grid.len())
        .filter(|&k| grid.subdomain_of(k) == i)
        .map(|k| [grid.x(k), 0.0])
        .collect();
    kle_on_points(i, &points, grid.h(), params, n_c)
}

/// Standard normal log-density of θ, including the `−(N/2) log 2π` constant.
pub fn log_prior_theta(theta: &ThetaVector) -> f64 {
    log_standard_normal(theta.as_slice())
}

pub fn log_standard_normal(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// `blocks · n_c` i.i.d. standard normal coefficients.
pub fn sample_prior_theta<R: Rng + ?Sized>(rng: &mut R, blocks: usize, n_c: usize) -> ThetaVector {
    let values = (0..blocks * n_c)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    ThetaVector::new(values, n_c).expect("layout is consistent by construction")
}

/// Identifies the inputs a cached set of local bases was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KleCacheKey {
    pub grid_n: usize,
    pub mc_x: usize,
    pub mc_y: usize,
    pub params: CovarianceParams,
    pub n_c: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct KleCacheFile {
    format: String,
    version: u32,
    key: KleCacheKey,
    bases: Vec<KleBasis>,
}

const KLE_CACHE_FORMAT: &str = "msm-kle-cache";
const KLE_CACHE_VERSION: u32 = 1;

pub fn write_kle_cache(path: &Path, key: &KleCacheKey, bases: &[KleBasis]) -> Result<()> {
    let file = KleCacheFile {
        format: KLE_CACHE_FORMAT.into(),
        version: KLE_CACHE_VERSION,
        key: key.clone(),
        bases: bases.to_vec(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Cached bases if the file exists and matches `key`; `None` on a key mismatch.
pub fn read_kle_cache(path: &Path, key: &KleCacheKey) -> Result<Option<Vec<KleBasis>>> {
    if !path.exists() {
        return Ok(None);
    }
    let file: KleCacheFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != KLE_CACHE_FORMAT || file.version != KLE_CACHE_VERSION {
        return Err(Error::Format(format!(
            "unsupported KLE cache {} v{} in {}",
            file.format,
            file.version,
            path.display()
        )));
    }
    Ok((file.key == *key).then_some(file.bases))
}

/// Load local bases from `cache` when it matches, otherwise compute and (re)write it.
pub fn local_kle_cached(
    partition: &SubdomainPartition,
    params: &CovarianceParams,
    n_c: usize,
    cache: Option<&Path>,
) -> Result<Vec<KleBasis>> {
    let key = KleCacheKey {
        grid_n: partition.grid().n(),
        mc_x: partition.mc_x(),
        mc_y: partition.mc_y(),
        params: *params,
        n_c,
    };
    if let Some(path) = cache {
        if let Some(bases) = read_kle_cache(path, &key)? {
            return Ok(bases);
        }
    }
    let bases = local_kle_all(partition, params, n_c)?;
    if let Some(path) = cache {
        write_kle_cache(path, &key, &bases)?;
    }
    Ok(bases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        let p = CovarianceParams::new(1.0, 0.5, 0.5).unwrap();
        assert_eq!(covariance_kernel([0.3, 0.2], [0.3, 0.2], &p), 1.0);
        let v = covariance_kernel([0.0, 0.0], [0.5, 0.0], &p);
        // exp(-0.25 / 0.5) computed independently
        let expected = (-0.5f64).exp();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-15);
        let q = CovarianceParams::new(2.0, 0.3, 0.1).unwrap();
        let a = [0.1, 0.9];
        let b = [0.7, 0.4];
        assert_eq!(covariance_kernel(a, b, &q), covariance_kernel(b, a, &q));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CovarianceParams::new(0.0, 1.0, 1.0).is_err());
        assert!(CovarianceParams::new(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn single_cell_basis() {
        let p = CovarianceParams::new(1.7, 0.2, 0.2).unwrap();
        let w = 0.0625;
        let b = kle_on_points(0, &[[0.5, 0.5]], w, &p, 1).unwrap();
        assert!((b.eigenvalues[0] - 1.7 * w).abs() < 1e-15);
        assert!((b.modes[0][0] - 1.0 / w.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn too_many_modes_is_a_rank_error() {
        let grid = Grid::new(8).unwrap();
        let part = SubdomainPartition::new(grid, 1, 1, 0).unwrap();
        let p = CovarianceParams::new(1.0, 0.8, 0.8).unwrap();
        let err = local_kle(&part, 0, &p, 64).unwrap_err();
        assert!(matches!(err, Error::NumericalRank { .. }), "{err}");
    }

    #[test]
    fn modes_are_orthonormal_and_signed() {
        let grid = Grid::new(16).unwrap();
        let part = SubdomainPartition::new(grid, 2, 2, 1).unwrap();
        let p = CovarianceParams::new(1.0, 0.1, 0.1).unwrap();
        let b = local_kle(&part, 0, &p, 6).unwrap();
        for j in 0..6 {
            for l in 0..6 {
                let expected = if j == l { 1.0 } else { 0.0 };
                assert!((b.inner(j, l) - expected).abs() < 1e-10);
            }
            let first = b.modes[j].iter().find(|x| x.abs() > 1e-8).unwrap();
            assert!(*first > 0.0);
        }
        assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn congruent_subdomains_share_spectra() {
        let grid = Grid::new(16).unwrap();
        let part = SubdomainPartition::new(grid, 2, 2, 1).unwrap();
        let p = CovarianceParams::new(1.0, 0.1, 0.2).unwrap();
        let bases = local_kle_all(&part, &p, 4).unwrap();
        for b in &bases[1..] {
            for (x, y) in b.eigenvalues.iter().zip(&bases[0].eigenvalues) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prior_density_constants() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let z = ThetaVector::zeros(1, 4);
        assert!((log_prior_theta(&z) + 2.0 * two_pi.ln()).abs() < 1e-14);
        let e = ThetaVector::new(vec![1.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert!((log_prior_theta(&e) + 0.5 + 2.0 * two_pi.ln()).abs() < 1e-14);
    }

    #[test]
    fn prior_density_integrates_to_one() {
        // trapezoid quadrature on [-12, 12]
        let n = 24_000;
        let a = -12.0;
        let step = 24.0 / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let x = a + k as f64 * step;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * log_standard_normal(&[x]).exp();
        }
        assert!((total * step - 1.0).abs() < 1e-6);
    }

    #[test]
    fn prior_draws() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            sample_prior_theta(&mut r1, 2, 3),
            sample_prior_theta(&mut r2, 2, 3)
        );

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_prior_theta(&mut rng, 1, 1).as_slice()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);

        let pairs: Vec<ThetaVector> = (0..10_000)
            .map(|_| sample_prior_theta(&mut rng, 2, 1))
            .collect();
        let corr = {
            let xs: Vec<f64> = pairs.iter().map(|t| t.as_slice()[0]).collect();
            let ys: Vec<f64> = pairs.iter().map(|t| t.as_slice()[1]).collect();
            pearson(&xs, &ys)
        };
        assert!(corr.abs() < 0.05);
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn cache_round_trip_and_key_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kle.json");
        let grid = Grid::new(8).unwrap();
        let part = SubdomainPartition::new(grid, 2, 2, 1).unwrap();
        let p = CovarianceParams::new(1.0, 0.2, 0.2).unwrap();
        let first = local_kle_cached(&part, &p, 3, Some(&path)).unwrap();
        assert!(path.exists());
        let second = local_kle_cached(&part, &p, 3, Some(&path)).unwrap();
        assert_eq!(first, second);
        let key = KleCacheKey {
            grid_n: 8,
            mc_x: 2,
            mc_y: 2,
            params: p,
            n_c: 2,
        };
        assert!(read_kle_cache(&path, &key).unwrap().is_none());
    }
}
