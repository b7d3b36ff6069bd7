//! Sampler identities evaluated two ways.

use rand::Rng;
use rand_distr::StandardNormal;

use super::discrete::{
    effective_proposal, promotion, rho_from_effective, rho_simplified, DiscreteChainSpec,
};
use crate::error::Result;
use crate::samplers::{Proposal, ProposalKind};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RhoIdentityReport {
    pub pairs: usize,
    /// Pairs with `g(x, y) < 1`.
    pub branch_promotion_below_one: usize,
    /// Pairs with `g(x, y) = 1`.
    pub branch_promotion_one: usize,
    pub max_deviation: f64,
}

impl RhoIdentityReport {
    pub fn merge(self, other: Self) -> Self {
        Self {
            pairs: self.pairs + other.pairs,
            branch_promotion_below_one: self.branch_promotion_below_one
                + other.branch_promotion_below_one,
            branch_promotion_one: self.branch_promotion_one + other.branch_promotion_one,
            max_deviation: self.max_deviation.max(other.max_deviation),
        }
    }

    pub fn both_branches(&self) -> bool {
        self.branch_promotion_below_one > 0 && self.branch_promotion_one > 0
    }
}

/// Compare the simplified stage-2 probability with the one built from `q*` on every pair.
pub fn rho_identity_check(spec: &DiscreteChainSpec) -> Result<RhoIdentityReport> {
    spec.check_condition5()?;
    let qs = effective_proposal(spec)?;
    let m = spec.states();
    let mut report = RhoIdentityReport::default();
    for x in 0..m {
        for y in 0..m {
            if x == y || spec.q[x][y] == 0.0 {
                continue;
            }
            report.pairs += 1;
            if promotion(spec, x, y)? < 1.0 {
                report.branch_promotion_below_one += 1;
            } else {
                report.branch_promotion_one += 1;
            }
            let dev = (rho_simplified(spec, x, y)? - rho_from_effective(spec, &qs, x, y)).abs();
            report.max_deviation = report.max_deviation.max(dev);
        }
    }
    Ok(report)
}

/// `q(y|x) > 0 ⇒ q*(y|x) > 0` whenever the coarse masses are positive, by enumeration.
pub fn effective_support_contains_proposal(spec: &DiscreteChainSpec) -> Result<bool> {
    let qs = effective_proposal(spec)?;
    let fc = spec.f_c.as_deref().unwrap_or(&[]);
    let m = spec.states();
    Ok((0..m).all(|x| {
        (0..m).all(|y| !(spec.q[x][y] > 0.0 && fc[x] > 0.0 && fc[y] > 0.0) || qs[(x, y)] > 0.0)
    }))
}

/// Max deviation between the direct pCN density ratio and `½(‖y‖² − ‖x‖²)` over random pairs.
pub fn pcn_ratio_identity_check<R: Rng + ?Sized>(
    samples: usize,
    beta: f64,
    dim: usize,
    rng: &mut R,
) -> Result<f64> {
    let p = Proposal::new(ProposalKind::Pcn, beta)?;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let direct = p.log_density(&y, &x) - p.log_density(&x, &y);
        let identity =
            0.5 * (y.iter().map(|v| v * v).sum::<f64>() - x.iter().map(|v| v * v).sum::<f64>());
        worst = worst.max((direct - identity).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rho_identity_on_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut total = RhoIdentityReport::default();
        for _ in 0..20 {
            let spec = DiscreteChainSpec::random(3, true, &mut rng);
            total = total.merge(rho_identity_check(&spec).unwrap());
            assert!(effective_support_contains_proposal(&spec).unwrap());
        }
        assert!(total.both_branches());
        assert!(total.max_deviation < 1e-12);
    }

    #[test]
    fn pcn_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(pcn_ratio_identity_check(10_000, 0.7, 8, &mut rng).unwrap() < 1e-10);
    }

    #[test]
    fn pcn_equal_points_and_full_step() {
        let p = Proposal::new(ProposalKind::Pcn, 1.0).unwrap();
        let x = [0.4, -0.2];
        assert_eq!(p.log_ratio(&x, &x), 0.0);
        let y = [1.5, 0.3];
        let prior = |v: &[f64]| -0.5 * v.iter().map(|a| a * a).sum::<f64>();
        let direct = p.log_density(&y, &x) - p.log_density(&x, &y);
        assert!((direct - (prior(&x) - prior(&y))).abs() < 1e-15);
    }
}
