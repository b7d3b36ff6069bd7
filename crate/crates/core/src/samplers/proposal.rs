//! Gaussian proposal kernels in θ-coordinates with identity covariance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ThetaVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    /// `y = x + βξ`
    RandomWalk,
    /// `y = √(1−β²) x + βξ`
    Pcn,
}

/// Coordinates a proposal may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    All,
    Subdomain(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub kind: ProposalKind,
    pub beta: f64,
}

impl Proposal {
    pub fn new(kind: ProposalKind, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!(
                "step size beta must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self { kind, beta })
    }

    fn contraction(&self) -> f64 {
        match self.kind {
            ProposalKind::RandomWalk => 1.0,
            ProposalKind::Pcn => (1.0 - self.beta * self.beta).max(0.0).sqrt(),
        }
    }

    /// Draw `y ~ q(·|theta)` on `block`; all other coordinates are copied bitwise.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        theta: &ThetaVector,
        block: Block,
        rng: &mut R,
    ) -> ThetaVector {
        let mut y = theta.clone();
        let range = match block {
            Block::All => 0..theta.len(),
            Block::Subdomain(i) => theta.block_range(i),
        };
        let a = self.contraction();
        for v in &mut y.as_mut_slice()[range] {
            let xi: f64 = rng.sample(StandardNormal);
            *v = a * *v + self.beta * xi;
        }
        y
    }

    /// `log q(x|y) − log q(y|x)`: zero for the random walk, `½(‖y‖² − ‖x‖²)` for pCN.
    pub fn log_ratio(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            ProposalKind::RandomWalk => 0.0,
            ProposalKind::Pcn => 0.5 * x.iter().zip(y).map(|(a, b)| b * b - a * a).sum::<f64>(),
        }
    }

    /// `log q(to|from)` over the given coordinates.
    pub fn log_density(&self, from: &[f64], to: &[f64]) -> f64 {
        let a = self.contraction();
        let var = self.beta * self.beta;
        let n = from.len() as f64;
        let sq: f64 = from.iter().zip(to).map(|(f, t)| (t - a * f).powi(2)).sum();
        -0.5 * sq / var - 0.5 * n * (2.0 * std::f64::consts::PI * var).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_step_pcn_is_an_independent_redraw() {
        let p = Proposal::new(ProposalKind::Pcn, 1.0).unwrap();
        let theta = ThetaVector::new(vec![5.0, -3.0], 2).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let y = p.propose(&theta, Block::All, &mut r1);
        let xi: Vec<f64> = (0..2)
            .map(|_| r2.sample::<f64, _>(StandardNormal))
            .collect();
        assert_eq!(y.as_slice(), &xi[..]);
    }

    #[test]
    fn proposals_are_reproducible_and_block_local() {
        let p = Proposal::new(ProposalKind::RandomWalk, 0.3).unwrap();
        let theta = ThetaVector::new((0..6).map(f64::from).collect(), 2).unwrap();
        let a = p.propose(
            &theta,
            Block::Subdomain(1),
            &mut ChaCha8Rng::seed_from_u64(8),
        );
        let b = p.propose(
            &theta,
            Block::Subdomain(1),
            &mut ChaCha8Rng::seed_from_u64(8),
        );
        assert_eq!(a, b);
        assert_eq!(theta.differing_blocks(&a), vec![1]);
    }

    #[test]
    fn pcn_moment() {
        let p = Proposal::new(ProposalKind::Pcn, 0.3).unwrap();
        let theta = ThetaVector::zeros(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| p.propose(&theta, Block::Subdomain(0), &mut rng).block(0)[0])
            .collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 0.09).abs() < 0.03 * 0.09);
    }

    #[test]
    fn ratios() {
        let rw = Proposal::new(ProposalKind::RandomWalk, 0.5).unwrap();
        assert_eq!(rw.log_ratio(&[1.0, 2.0], &[-3.0, 0.5]), 0.0);
        let pcn = Proposal::new(ProposalKind::Pcn, 0.5).unwrap();
        assert_eq!(pcn.log_ratio(&[0.0, 0.0], &[1.0, 0.0]), 0.5);

        let pcn = Proposal::new(ProposalKind::Pcn, 0.4).unwrap();
        let x = [0.3, -1.2, 0.8];
        let y = [1.1, 0.4, -0.2];
        let direct = pcn.log_density(&y, &x) - pcn.log_density(&x, &y);
        assert!((direct - pcn.log_ratio(&x, &y)).abs() < 1e-10);
    }

    #[test]
    fn beta_range() {
        assert!(Proposal::new(ProposalKind::Pcn, 0.0).is_err());
        assert!(Proposal::new(ProposalKind::Pcn, 1.5).is_err());
    }
}
