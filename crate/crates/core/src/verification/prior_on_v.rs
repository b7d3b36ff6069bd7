//! Prior density on the space of generated fields, recovered through the extended basis.

use nalgebra::{DVector, Dyn, QR};

use crate::coupling::{extended_basis, CouplingKind, CouplingLayout};
use crate::error::{Error, Result};
use crate::field::ThetaVector;
use crate::random_field::{log_standard_normal, KleBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorOnVReport {
    pub dim: usize,
    pub rank: usize,
    pub max_coefficient_error: f64,
    pub max_log_density_error: f64,
}

pub const LOCAL_AVERAGE_REFUSAL: &str = "local averaging: the relation between theta and the generated field \
     depends on the acceptance history and is no longer one-to-one, so the prior on theta does not induce a \
     density on the generated fields";

fn least_squares(qr: &QR<f64, Dyn, Dyn>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let qtb = qr.q().transpose() * b;
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::NotOneToOne("the extended basis matrix is singular".into()))
}

/// For each θ, build `η = Σ √λ_j θ_j Ψ_j`, recover the coefficients by least
/// squares against the `Ψ` matrix and compare `π_θ` at both.
pub fn prior_on_v_check(
    kind: &CouplingKind,
    bases: &[KleBasis],
    layout: &CouplingLayout,
    thetas: &[ThetaVector],
) -> Result<PriorOnVReport> {
    if !kind.is_linear() {
        return Err(Error::NotOneToOne(LOCAL_AVERAGE_REFUSAL.into()));
    }
    let ext = extended_basis(kind, bases, layout)?;
    let psi = ext.matrix();
    let svd = psi.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank < ext.dim() {
        return Err(Error::NotOneToOne(format!(
            "the extended basis has rank {rank} < {}; coefficients cannot be recovered",
            ext.dim()
        )));
    }
    let qr = psi.qr();
    let mut report = PriorOnVReport {
        dim: ext.dim(),
        rank,
        max_coefficient_error: 0.0,
        max_log_density_error: 0.0,
    };
    for theta in thetas {
        let eta = ext.assemble(theta.as_slice());
        let a = least_squares(&qr, &DVector::from_column_slice(&eta.values))?;
        let recovered: Vec<f64> = a.iter().zip(&ext.sqrt_lambda).map(|(a, s)| a / s).collect();
        let coeff_err = recovered
            .iter()
            .zip(theta.as_slice())
            .map(|(r, t)| (r - t).abs())
            .fold(0.0, f64::max);
        let dens_err =
            (log_standard_normal(&recovered) - log_standard_normal(theta.as_slice())).abs();
        report.max_coefficient_error = report.max_coefficient_error.max(coeff_err);
        report.max_log_density_error = report.max_log_density_error.max(dens_err);
    }
    Ok(report)
}
