//! Acceptance rates, effective sample sizes and run summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::ChainStats;

pub const SUMMARY_FORMAT: &str = "msm-summary";
pub const SUMMARY_VERSION: u32 = 1;

/// Geyer's initial positive sequence estimator, clamped to `[1, n]`.
/// A constant series has no information beyond a single draw.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = gamma(2 * m) + gamma(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (-g0 + 2.0 * sum) / g0;
    (n as f64 / tau).clamp(1.0, n as f64)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainRates {
    pub subdomain: usize,
    pub proposals: u64,
    pub promotions: u64,
    pub acceptances: u64,
    pub promotion_rate: f64,
    /// Accepted over promoted.
    pub stage2_rate: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub format: String,
    pub version: u32,
    pub coupling: String,
    pub mode: String,
    pub chains: usize,
    pub cycles: u64,
    /// Samples kept after burn-in, over all chains.
    pub retained: u64,
    pub per_subdomain: Vec<SubdomainRates>,
    pub acceptance_rate: f64,
    pub fine_solves: u64,
    pub coarse_solves: u64,
    pub stage1_rejections: u64,
    /// Per θ coordinate, summed over chains.
    pub ess: Vec<f64>,
    pub theta_mean: Vec<f64>,
    /// Correlation of the posterior mean field with the true field, when known.
    #[serde(default)]
    pub truth_correlation: Option<f64>,
    #[serde(default)]
    pub note: Option<String>,
}

impl DiagnosticsSummary {
    pub fn rates(stats: &ChainStats) -> Vec<SubdomainRates> {
        stats
            .per_subdomain
            .iter()
            .enumerate()
            .map(|(subdomain, s)| SubdomainRates {
                subdomain,
                proposals: s.proposals,
                promotions: s.promotions,
                acceptances: s.acceptances,
                promotion_rate: s.promotion_rate(),
                stage2_rate: s.stage2_rate(),
                acceptance_rate: s.acceptance_rate(),
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.format != SUMMARY_FORMAT || s.version != SUMMARY_VERSION {
            return Err(Error::Format(format!(
                "unsupported summary {} v{} in {}",
                s.format,
                s.version,
                path.display()
            )));
        }
        Ok(s)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "coupling {}  mode {}  chains {}  cycles {}  retained {}\n",
            self.coupling, self.mode, self.chains, self.cycles, self.retained
        );
        out.push_str("subdomain  proposals  promoted  accepted  promote%  stage2%  accept%\n");
        for r in &self.per_subdomain {
            out.push_str(&format!(
                "{:>9}  {:>9}  {:>8}  {:>8}  {:>8.3}  {:>7.3}  {:>7.3}\n",
                r.subdomain,
                r.proposals,
                r.promotions,
                r.acceptances,
                r.promotion_rate,
                r.stage2_rate,
                r.acceptance_rate
            ));
        }
        let (lo, hi) = self
            .ess
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            });
        out.push_str(&format!(
            "acceptance {:.3}  fine solves {}  coarse solves {}  stage-1 rejections {}\n",
            self.acceptance_rate, self.fine_solves, self.coarse_solves, self.stage1_rejections
        ));
        out.push_str(&format!("ESS min {lo:.1}  max {hi:.1}\n"));
        if let Some(c) = self.truth_correlation {
            out.push_str(&format!("posterior mean vs truth correlation {c:.3}\n"));
        }
        if let Some(note) = &self.note {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}
