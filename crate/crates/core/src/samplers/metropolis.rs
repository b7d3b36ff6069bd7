//! Generic Metropolis-Hastings and two-stage delayed-acceptance steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one accept/reject draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhDecision {
    pub log_alpha: f64,
    pub uniform: f64,
    pub accepted: bool,
}

/// Accept with probability `exp(log_alpha)`; one uniform is always drawn.
pub fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> MhDecision {
    let uniform: f64 = rng.random();
    let accepted = log_alpha >= 0.0 || (log_alpha > f64::NEG_INFINITY && uniform.ln() < log_alpha);
    MhDecision {
        log_alpha,
        uniform,
        accepted,
    }
}

/// `min{0, log f(y) − log f(x) + log q(x|y) − log q(y|x)}`.
pub fn log_acceptance(log_f_x: f64, log_f_y: f64, log_q_ratio: f64) -> f64 {
    if log_f_y == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (log_f_y - log_f_x + log_q_ratio).min(0.0)
}

fn check_current(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "{what} at the current state is {value}; the chain must stay inside the support"
        )))
    }
}

fn check_proposed(value: f64, what: &str) -> Result<()> {
    if value.is_nan() || value == f64::INFINITY {
        Err(Error::Invariant(format!(
            "{what} at the proposal is {value}"
        )))
    } else {
        Ok(())
    }
}

/// A point together with its target log-density.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<S> {
    pub point: S,
    pub log_f: f64,
}

/// One Metropolis-Hastings step. `log_q_ratio` is `log q(x|y) − log q(y|x)`.
pub fn mh_step<S, F, R>(
    current: Scored<S>,
    proposal: S,
    log_q_ratio: f64,
    mut log_target: F,
    rng: &mut R,
) -> Result<(Scored<S>, MhDecision)>
where
    F: FnMut(&S) -> Result<f64>,
    R: Rng + ?Sized,
{
    check_current(current.log_f, "target log-density")?;
    let log_f_y = log_target(&proposal)?;
    check_proposed(log_f_y, "target log-density")?;
    let decision = accept(log_acceptance(current.log_f, log_f_y, log_q_ratio), rng);
    let next = if decision.accepted {
        Scored {
            point: proposal,
            log_f: log_f_y,
        }
    } else {
        current
    };
    Ok((next, decision))
}

/// Stage-1 promotion probability
/// `log g = min{0, [L_c(y) + π(y) + q(x|y)] − [L_c(x) + π(x) + q(y|x)]}` in logs,
/// with `log_correction = [π(y) + q(x|y)] − [π(x) + q(y|x)]`.
pub fn log_g(lc_x: f64, lc_y: f64, log_correction: f64) -> f64 {
    log_acceptance(lc_x, lc_y, log_correction)
}

/// Simplified stage-2 probability `min{0, [L_f(y) − L_f(x)] − [L_c(y) − L_c(x)]}`.
pub fn log_rho_simplified(lf_x: f64, lf_y: f64, lc_x: f64, lc_y: f64) -> f64 {
    if lf_y == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    ((lf_y - lf_x) - (lc_y - lc_x)).min(0.0)
}

/// A point with cached coarse and fine log-likelihoods and log-prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Staged<S> {
    pub point: S,
    pub log_prior: f64,
    pub log_lc: f64,
    pub log_lf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStageDecision {
    pub stage1: MhDecision,
    /// `None` when the proposal was not promoted.
    pub stage2: Option<MhDecision>,
}

impl TwoStageDecision {
    pub fn promoted(&self) -> bool {
        self.stage1.accepted
    }

    pub fn accepted(&self) -> bool {
        self.stage2.is_some_and(|d| d.accepted)
    }
}

/// Proposal handed to [`two_stage_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S> {
    pub point: S,
    pub log_prior: f64,
    /// `[π(y) + q(x|y)] − [π(x) + q(y|x)]` in logs.
    pub log_correction: f64,
}

/// One delayed-acceptance step. The fine evaluator runs only on promotion.
pub fn two_stage_step<S, C, F, R>(
    current: Staged<S>,
    candidate: Candidate<S>,
    mut coarse: C,
    mut fine: F,
    rng: &mut R,
) -> Result<(Staged<S>, TwoStageDecision)>
where
    C: FnMut(&S) -> Result<f64>,
    F: FnMut(&S) -> Result<f64>,
    R: Rng + ?Sized,
{
    check_current(current.log_lc, "coarse log-likelihood")?;
    check_current(current.log_lf, "fine log-likelihood")?;
    let lc_y = coarse(&candidate.point)?;
    check_proposed(lc_y, "coarse log-likelihood")?;
    let stage1 = accept(log_g(current.log_lc, lc_y, candidate.log_correction), rng);
    if !stage1.accepted {
        return Ok((
            current,
            TwoStageDecision {
                stage1,
                stage2: None,
            },
        ));
    }
    let lf_y = fine(&candidate.point)?;
    check_proposed(lf_y, "fine log-likelihood")?;
    let stage2 = accept(
        log_rho_simplified(current.log_lf, lf_y, current.log_lc, lc_y),
        rng,
    );
    let decision = TwoStageDecision {
        stage1,
        stage2: Some(stage2),
    };
    if stage2.accepted {
        Ok((
            Staged {
                point: candidate.point,
                log_prior: candidate.log_prior,
                log_lc: lc_y,
                log_lf: lf_y,
            },
            decision,
        ))
    } else {
        Ok((current, decision))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn uphill_moves_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (next, d) = mh_step(
                Scored {
                    point: 0,
                    log_f: -2.0,
                },
                1,
                0.0,
                |_| Ok(-1.0),
                &mut rng,
            )
            .unwrap();
            assert!(d.accepted);
            assert_eq!(d.log_alpha, 0.0);
            assert_eq!(next.point, 1);
        }
    }

    #[test]
    fn current_outside_support_is_an_invariant_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = mh_step(
            Scored {
                point: 0,
                log_f: f64::NEG_INFINITY,
            },
            1,
            0.0,
            |_| Ok(0.0),
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn proposals_outside_support_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, d) = mh_step(
            Scored {
                point: 0,
                log_f: 0.0,
            },
            1,
            0.0,
            |_| Ok(f64::NEG_INFINITY),
            &mut rng,
        )
        .unwrap();
        assert!(!d.accepted);
        assert_eq!(next.point, 0);
    }

    #[test]
    fn two_point_target() {
        let f = [0.3f64, 0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = Scored {
            point: 0usize,
            log_f: f[0].ln(),
        };
        let mut counts = [0usize; 2];
        let steps = 100_000;
        for _ in 0..steps {
            let y = 1 - s.point;
            s = mh_step(s, y, 0.0, |&k| Ok(f[k].ln()), &mut rng).unwrap().0;
            counts[s.point] += 1;
        }
        // Stationary vector of [[0.0, 1.0], [3/7, 4/7]].
        let k = [[0.0, 1.0], [3.0 / 7.0, 4.0 / 7.0]];
        let mut pi = [0.5, 0.5];
        for _ in 0..200 {
            pi = [
                pi[0] * k[0][0] + pi[1] * k[1][0],
                pi[0] * k[0][1] + pi[1] * k[1][1],
            ];
        }
        for i in 0..2 {
            assert!((counts[i] as f64 / steps as f64 - pi[i]).abs() < 0.01);
        }
    }

    #[test]
    fn standard_normal_random_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = Scored {
            point: 0.0f64,
            log_f: 0.0,
        };
        let (mut m1, mut m2) = (0.0, 0.0);
        let steps = 100_000;
        for _ in 0..steps {
            let xi: f64 = rng.sample(StandardNormal);
            let y = s.point + 0.5 * xi;
            s = mh_step(s, y, 0.0, |&x| Ok(-0.5 * x * x), &mut rng)
                .unwrap()
                .0;
            m1 += s.point;
            m2 += s.point * s.point;
        }
        let mean = m1 / steps as f64;
        let var = m2 / steps as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn no_fine_evaluation_without_promotion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fine_calls = 0;
        let mut promoted = 0;
        let mut cur = Staged {
            point: 0.0,
            log_prior: 0.0,
            log_lc: 0.0,
            log_lf: 0.0,
        };
        for k in 0..1000 {
            let cand = Candidate {
                point: k as f64,
                log_prior: 0.0,
                log_correction: 0.0,
            };
            let (next, d) = two_stage_step(
                cur,
                cand,
                |_| Ok(-1.0),
                |_| {
                    fine_calls += 1;
                    Ok(-1.0)
                },
                &mut rng,
            )
            .unwrap();
            if d.promoted() {
                promoted += 1;
            } else {
                assert!(d.stage2.is_none());
            }
            assert!(!d.accepted() || d.promoted());
            cur = next;
            cur.log_lc = 0.0;
            cur.log_lf = 0.0;
        }
        assert_eq!(fine_calls, promoted);
        assert!(promoted < 1000);
    }

    #[test]
    fn identical_stages_give_unit_rho() {
        assert_eq!(log_rho_simplified(-3.0, -5.0, -3.0, -5.0), 0.0);
        assert_eq!(log_rho_simplified(-1.0, -2.0, -1.0, -1.5), -0.5);
    }
}
