//! Exact transition kernels on small finite state spaces.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_STATES: usize = 12;

/// Target masses `f`, proposal rows `q[x][y] = q(y|x)` and optional coarse masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChainSpec {
    pub f: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub f_c: Option<Vec<f64>>,
}

impl DiscreteChainSpec {
    pub fn new(f: Vec<f64>, q: Vec<Vec<f64>>, f_c: Option<Vec<f64>>) -> Result<Self> {
        let spec = Self { f, q, f_c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn states(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.f.len();
        if m == 0 || m > MAX_STATES {
            return Err(Error::Contract(format!(
                "state count {m} must lie in 1..={MAX_STATES}"
            )));
        }
        let nonneg = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !nonneg(&self.f) || (self.f.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(
                "target masses must be non-negative and sum to one".into(),
            ));
        }
        if self.q.len() != m
            || self
                .q
                .iter()
                .any(|r| r.len() != m || !nonneg(r) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-12)
        {
            return Err(Error::Contract(
                "proposal rows must be non-negative and sum to one".into(),
            ));
        }
        if let Some(fc) = &self.f_c {
            if fc.len() != m || !nonneg(fc) {
                return Err(Error::Contract(
                    "coarse masses must be non-negative, one per state".into(),
                ));
            }
        }
        Ok(())
    }

    /// Random spec with strictly positive entries.
    pub fn random<R: Rng + ?Sized>(m: usize, with_coarse: bool, rng: &mut R) -> Self {
        let simplex = |rng: &mut R| {
            let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let f = simplex(rng);
        let q = (0..m).map(|_| simplex(rng)).collect();
        let f_c = with_coarse.then(|| simplex(rng));
        Self { f, q, f_c }
    }

    fn coarse(&self) -> Result<&[f64]> {
        self.f_c
            .as_deref()
            .ok_or_else(|| Error::Contract("the two-stage kernel needs coarse masses".into()))
    }

    /// Pairs `(x, y)` with `q(y|x) > 0` but `f_c(y) = 0`.
    pub fn condition5_violations(&self) -> Result<Vec<(usize, usize)>> {
        let fc = self.coarse()?;
        let m = self.states();
        Ok((0..m)
            .flat_map(|x| (0..m).map(move |y| (x, y)))
            .filter(|&(x, y)| self.q[x][y] > 0.0 && fc[y] == 0.0)
            .collect())
    }

    pub fn check_condition5(&self) -> Result<()> {
        let v = self.condition5_violations()?;
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "condition 5 fails: q(y|x) > 0 but f_c(y) = 0 for pairs {v:?}"
            )))
        }
    }
}

/// `min{1, a/b}` for non-negative masses, with `0/0` treated as a rejection.
fn ratio_min1(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        1.0
    } else {
        (num / den).min(1.0)
    }
}

/// Metropolis-Hastings acceptance `α(x, y)`.
pub fn mh_acceptance(spec: &DiscreteChainSpec, x: usize, y: usize) -> f64 {
    ratio_min1(spec.f[y] * spec.q[y][x], spec.f[x] * spec.q[x][y])
}

fn fill_diagonal(mut k: DMatrix<f64>) -> DMatrix<f64> {
    for x in 0..k.nrows() {
        let off: f64 = (0..k.ncols()).filter(|&y| y != x).map(|y| k[(x, y)]).sum();
        k[(x, x)] = 1.0 - off;
    }
    k
}

/// `K(x, y) = α(x, y) q(y|x)` off the diagonal, rejection mass on it.
pub fn exact_mh_kernel(spec: &DiscreteChainSpec) -> DMatrix<f64> {
    let m = spec.states();
    let k = DMatrix::from_fn(m, m, |x, y| {
        if x == y {
            0.0
        } else {
            mh_acceptance(spec, x, y) * spec.q[x][y]
        }
    });
    fill_diagonal(k)
}

/// Stage-1 promotion probability `g(x, y)`.
pub fn promotion(spec: &DiscreteChainSpec, x: usize, y: usize) -> Result<f64> {
    let fc = spec.coarse()?;
    Ok(ratio_min1(fc[y] * spec.q[y][x], fc[x] * spec.q[x][y]))
}

/// Effective proposal `q*(y|x) = g(x, y) q(y|x)` plus the stage-1 rejection mass on `y = x`.
pub fn effective_proposal(spec: &DiscreteChainSpec) -> Result<DMatrix<f64>> {
    let m = spec.states();
    let mut qs = DMatrix::zeros(m, m);
    for x in 0..m {
        for y in 0..m {
            if x != y {
                qs[(x, y)] = promotion(spec, x, y)? * spec.q[x][y];
            }
        }
    }
    Ok(fill_diagonal(qs))
}

/// Simplified stage-2 probability `min{1, f(y) f_c(x) / (f(x) f_c(y))}`.
pub fn rho_simplified(spec: &DiscreteChainSpec, x: usize, y: usize) -> Result<f64> {
    let fc = spec.coarse()?;
    Ok(ratio_min1(spec.f[y] * fc[x], spec.f[x] * fc[y]))
}

/// Stage-2 probability built directly from `q*`: `min{1, f(y) q*(x|y) / (f(x) q*(y|x))}`.
pub fn rho_from_effective(spec: &DiscreteChainSpec, qs: &DMatrix<f64>, x: usize, y: usize) -> f64 {
    ratio_min1(spec.f[y] * qs[(y, x)], spec.f[x] * qs[(x, y)])
}

#[derive(Debug, Clone)]
pub struct TwoStageKernel {
    pub matrix: DMatrix<f64>,
    /// Pairs breaking condition 5; the kernel is still built so the failure can be observed.
    pub condition5_violations: Vec<(usize, usize)>,
}

/// Composite delayed-acceptance kernel `ρ(x, y) q*(y|x)` with rejection mass on the diagonal.
pub fn exact_two_stage_kernel(spec: &DiscreteChainSpec) -> Result<TwoStageKernel> {
    let violations = spec.condition5_violations()?;
    let qs = effective_proposal(spec)?;
    let m = spec.states();
    let mut k = DMatrix::zeros(m, m);
    for x in 0..m {
        for y in 0..m {
            if x != y && qs[(x, y)] > 0.0 {
                k[(x, y)] = rho_simplified(spec, x, y)? * qs[(x, y)];
            }
        }
    }
    Ok(TwoStageKernel {
        matrix: fill_diagonal(k),
        condition5_violations: violations,
    })
}

pub fn max_row_sum_error(k: &DMatrix<f64>) -> f64 {
    k.row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// `max |(fK)(y) − f(y)|`.
pub fn fixed_point_residual(f: &[f64], k: &DMatrix<f64>) -> f64 {
    let fv = DVector::from_column_slice(f);
    let fk = k.transpose() * &fv;
    (fk - fv).amax()
}

/// `max |f(x)K(x,y) − f(y)K(y,x)|`.
pub fn detailed_balance_residual(f: &[f64], k: &DMatrix<f64>) -> f64 {
    let m = f.len();
    let mut worst: f64 = 0.0;
    for x in 0..m {
        for y in 0..m {
            worst = worst.max((f[x] * k[(x, y)] - f[y] * k[(y, x)]).abs());
        }
    }
    worst
}

/// Stationary distribution by power iteration on the lazy kernel `(I + K)/2`, starting from `start`.
pub fn stationary_power(
    k: &DMatrix<f64>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let m = k.nrows();
    let lazy = (DMatrix::identity(m, m) + k) * 0.5;
    let lazy_t = lazy.transpose();
    let mut p = DVector::from_column_slice(start);
    p /= p.sum();
    for _ in 0..max_iter {
        let next = &lazy_t * &p;
        let diff = (&next - &p).amax();
        p = next;
        if diff < tol {
            break;
        }
    }
    p
}

/// Stationary distribution from the linear system `[Kᵀ − I; 1ᵀ] π = [0; 1]` (least squares).
pub fn stationary_solve(k: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = k.nrows();
    let mut a = DMatrix::zeros(m + 1, m);
    a.view_mut((0, 0), (m, m))
        .copy_from(&(k.transpose() - DMatrix::identity(m, m)));
    a.row_mut(m).fill(1.0);
    let mut b = DVector::zeros(m + 1);
    b[m] = 1.0;
    a.svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Invariant(format!("stationary solve failed: {e}")))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// A spec whose coarse model vanishes on a state the proposal reaches.
pub fn condition5_counterexample() -> DiscreteChainSpec {
    let m = 4;
    let f = vec![0.2, 0.3, 0.25, 0.25];
    let q = vec![vec![1.0 / m as f64; m]; m];
    let f_c = Some(vec![0.3, 0.0, 0.4, 0.3]);
    DiscreteChainSpec { f, q, f_c }
}
