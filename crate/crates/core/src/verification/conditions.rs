//! Numerical monitors for the convergence conditions of the sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::field::ThetaVector;
use crate::samplers::{ChainStats, LogLikelihood, MsmSampler};

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionAudit {
    /// Target log-density finite at every probe, including far-out ones (support is all of R^N).
    pub target_finite: bool,
    /// Proposal log-density finite for every probed pair.
    pub proposal_positive: bool,
    /// At least one rejection in the monitored run.
    pub rejection_observed: bool,
    pub probes: usize,
}

impl ConditionAudit {
    pub fn passed(&self) -> bool {
        self.target_finite && self.proposal_positive && self.rejection_observed
    }
}

/// Probe the target at θ drawn at scales 1, 3 and 10, proposal densities between
/// random pairs, and the rejection counter of a finished run.
pub fn condition_audit<L, R>(
    sampler: &MsmSampler<'_, L>,
    stats: &ChainStats,
    probes: usize,
    rng: &mut R,
) -> Result<ConditionAudit>
where
    L: LogLikelihood + ?Sized,
    R: Rng + ?Sized,
{
    let blocks = sampler.blocks();
    let n_c = sampler.n_c();
    let draw = |rng: &mut R, scale: f64| -> Vec<f64> {
        (0..blocks * n_c)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut target_finite = true;
    let mut proposal_positive = true;
    for k in 0..probes {
        let scale = [1.0, 3.0, 10.0][k % 3];
        let theta = ThetaVector::new(draw(rng, scale), n_c)?;
        let state = sampler.init(theta)?;
        target_finite &=
            (state.log_prior + state.log_lf).is_finite() && state.log_lc.is_none_or(f64::is_finite);
        let x = draw(rng, scale);
        let y = draw(rng, scale);
        proposal_positive &= sampler.config().proposal.log_density(&x, &y).is_finite();
    }
    Ok(ConditionAudit {
        target_finite,
        proposal_positive,
        rejection_observed: stats.acceptances() < stats.proposals(),
        probes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneIntegral {
    /// Coordinate held fixed.
    pub axis: usize,
    pub offset: f64,
    pub integral: f64,
    /// Relative change when the integration window doubles.
    pub window_change: f64,
}

/// Toy two-dimensional target: standard normal prior times a nonlinear likelihood.
pub fn toy_log_target(t: [f64; 2]) -> f64 {
    let forward = t[0].sin() + t[1] * t[1] / (1.0 + t[0] * t[0]);
    -0.5 * (t[0] * t[0] + t[1] * t[1]) - (forward - 0.5).powi(2) / 0.1
}

fn line_integral<F: Fn([f64; 2]) -> f64>(
    log_f: &F,
    axis: usize,
    offset: f64,
    radius: f64,
    steps: usize,
) -> f64 {
    let h = 2.0 * radius / steps as f64;
    let point = |s: f64| if axis == 0 { [offset, s] } else { [s, offset] };
    let mut sum = 0.0;
    for k in 0..=steps {
        let s = -radius + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        sum += w * log_f(point(s)).exp();
    }
    sum * h
}

/// Integrals of `f` over the lines `θ_axis = offset` by the trapezoid rule on
/// windows of radius 8 and 16.
pub fn condition7_probe<F: Fn([f64; 2]) -> f64>(
    log_f: F,
    offsets: &[f64],
) -> Vec<HyperplaneIntegral> {
    let mut out = Vec::new();
    for axis in 0..2 {
        for &offset in offsets {
            let a = line_integral(&log_f, axis, offset, 8.0, 4000);
            let b = line_integral(&log_f, axis, offset, 16.0, 8000);
            out.push(HyperplaneIntegral {
                axis,
                offset,
                integral: b,
                window_change: if b > 0.0 { ((b - a) / b).abs() } else { 0.0 },
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_lines_integrate_in_closed_form() {
        let lines = condition7_probe(|t| -0.5 * (t[0] * t[0] + t[1] * t[1]), &[0.0, 1.0]);
        for l in lines {
            let exact = (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * l.offset * l.offset).exp();
            assert!((l.integral - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_target_has_finite_hyperplane_integrals() {
        for l in condition7_probe(toy_log_target, &[-2.0, 0.0, 0.5, 3.0]) {
            assert!(l.integral.is_finite() && l.integral > 0.0);
            assert!(l.window_change < 1e-8);
        }
    }
}
