//! Global assembling operators `G: θ ↦ η`.
//!
//! Three couplings are provided:
//!
//! * **uncoupled**: local expansions glued together, nothing else;
//! * **global average**: every band cell is replaced by the uniform mean of
//!   the uncoupled values over its averaging stencil, at every iteration;
//! * **local average**: only the active subdomain is rewritten and only its
//!   band cells are averaged, reading neighbouring values from the last
//!   accepted field. The result depends on the acceptance history, so this
//!   operator is not a function of θ alone.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldRole, ThetaVector};
use crate::grid::{neighbors_in_ellipse, Grid1D, Region, SubdomainPartition};
use crate::random_field::KleBasis;

/// Ellipse semi-axes as fractions of the correlation lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFractions {
    pub fx: f64,
    pub fy: f64,
}

impl Default for EllipseFractions {
    fn default() -> Self {
        Self { fx: 0.5, fy: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingKind {
    Uncoupled,
    GlobalAverage { ellipse: EllipseFractions },
    LocalAverage { ellipse: EllipseFractions },
}

impl CouplingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::Uncoupled => "uncoupled",
            CouplingKind::GlobalAverage { .. } => "global-average",
            CouplingKind::LocalAverage { .. } => "local-average",
        }
    }

    pub fn ellipse(&self) -> Option<EllipseFractions> {
        match *self {
            CouplingKind::Uncoupled => None,
            CouplingKind::GlobalAverage { ellipse } | CouplingKind::LocalAverage { ellipse } => {
                Some(ellipse)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.ellipse() {
            if !(e.fx > 0.0 && e.fy > 0.0) {
                return Err(Error::Config(format!(
                    "ellipse fractions must be positive, got ({}, {})",
                    e.fx, e.fy
                )));
            }
        }
        Ok(())
    }

    /// Whether `G` is linear in θ (and hence has an extended basis).
    pub fn is_linear(&self) -> bool {
        !matches!(self, CouplingKind::LocalAverage { .. })
    }
}

/// Averaging rule for the 1D test geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stencil1D {
    /// All points within `radius` of the center (symmetric ellipse).
    Radius(f64),
    /// Points within `radius` that also lie in the band `R2 ∪ R3`.
    BandOnly(f64),
}

/// Cell ownership and averaging stencils, independent of the basis values.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayout {
    subdomain_of: Vec<usize>,
    local_index: Vec<usize>,
    cells_of: Vec<Vec<usize>>,
    stencils: Vec<Option<Vec<usize>>>,
}

impl CouplingLayout {
    /// Layout of a 2D partition with ellipse semi-axes `(ax, ay)` in physical units.
    pub fn from_partition(partition: &SubdomainPartition, ax: f64, ay: f64) -> Self {
        let grid = partition.grid();
        let stencils = (0..grid.cell_count())
            .map(|c| {
                partition
                    .is_band(c)
                    .then(|| neighbors_in_ellipse(grid, c, ax, ay))
            })
            .collect();
        Self::build(
            partition.subdomain_map().to_vec(),
            partition.count(),
            stencils,
        )
    }

    /// Layout for `kind` with ellipse axes scaled by the correlation lengths.
    pub fn for_kind(partition: &SubdomainPartition, kind: &CouplingKind, lx: f64, ly: f64) -> Self {
        match kind.ellipse() {
            Some(e) => Self::from_partition(partition, e.fx * lx, e.fy * ly),
            None => {
                let stencils = vec![None; partition.grid().cell_count()];
                Self::build(
                    partition.subdomain_map().to_vec(),
                    partition.count(),
                    stencils,
                )
            }
        }
    }

    pub fn from_grid1d(grid: &Grid1D, stencil: Stencil1D) -> Self {
        let n = grid.len();
        let stencils = (0..n)
            .map(|c| {
                if !grid.is_band(c) {
                    return None;
                }
                let (radius, band_only) = match stencil {
                    Stencil1D::Radius(r) => (r, false),
                    Stencil1D::BandOnly(r) => (r, true),
                };
                let x0 = grid.x(c);
                let set: Vec<usize> = (0..n)
                    .filter(|&k| (grid.x(k) - x0).abs() <= radius + 1e-12 * grid.h())
                    .filter(|&k| !band_only || grid.is_band(k))
                    .collect();
                Some(set)
            })
            .collect();
        Self::build((0..n).map(|k| grid.subdomain_of(k)).collect(), 2, stencils)
    }

    fn build(subdomain_of: Vec<usize>, count: usize, stencils: Vec<Option<Vec<usize>>>) -> Self {
        let mut cells_of = vec![Vec::new(); count];
        let mut local_index = vec![0; subdomain_of.len()];
        for (c, &s) in subdomain_of.iter().enumerate() {
            local_index[c] = cells_of[s].len();
            cells_of[s].push(c);
        }
        Self {
            subdomain_of,
            local_index,
            cells_of,
            stencils,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.subdomain_of.len()
    }

    pub fn subdomain_count(&self) -> usize {
        self.cells_of.len()
    }

    pub fn subdomain_of(&self, cell: usize) -> usize {
        self.subdomain_of[cell]
    }

    pub fn cells_of(&self, s: usize) -> &[usize] {
        &self.cells_of[s]
    }

    /// Averaging set of a band cell; `None` for cells outside the band.
    pub fn stencil(&self, cell: usize) -> Option<&[usize]> {
        self.stencils[cell].as_deref()
    }

    pub fn check_bases(&self, bases: &[KleBasis]) -> Result<()> {
        if bases.len() != self.subdomain_count() {
            return Err(Error::Contract(format!(
                "{} bases supplied for {} subdomains",
                bases.len(),
                self.subdomain_count()
            )));
        }
        for (s, b) in bases.iter().enumerate() {
            if b.cell_count() != self.cells_of[s].len() {
                return Err(Error::Contract(format!(
                    "basis {s} has {} cells, subdomain has {}",
                    b.cell_count(),
                    self.cells_of[s].len()
                )));
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: &ThetaVector, bases: &[KleBasis]) -> Result<()> {
        self.check_bases(bases)?;
        let expected: usize = bases.iter().map(KleBasis::n_c).sum();
        if theta.len() != expected || bases.iter().any(|b| b.n_c() != theta.n_c()) {
            return Err(Error::Contract(format!(
                "theta has length {} with block size {}, bases expect {expected}",
                theta.len(),
                theta.n_c()
            )));
        }
        Ok(())
    }
}

pub fn assemble_uncoupled(
    theta: &ThetaVector,
    bases: &[KleBasis],
    layout: &CouplingLayout,
) -> Result<Field> {
    layout.check_theta(theta, bases)?;
    let mut eta = vec![0.0; layout.cell_count()];
    for (s, basis) in bases.iter().enumerate() {
        let local = basis.expand(theta.block(s));
        for (&c, v) in layout.cells_of(s).iter().zip(local) {
            eta[c] = v;
        }
    }
    Ok(Field::new(FieldRole::LogPermeability, eta))
}

fn average_bands(uncoupled: &[f64], layout: &CouplingLayout) -> Vec<f64> {
    let mut out = uncoupled.to_vec();
    for (c, o) in out.iter_mut().enumerate() {
        if let Some(set) = layout.stencil(c) {
            *o = set.iter().map(|&k| uncoupled[k]).sum::<f64>() / set.len() as f64;
        }
    }
    out
}

/// Uncoupled field followed by uniform stencil averaging of every band cell.
/// Averages always read the uncoupled values.
pub fn assemble_global_average(
    theta: &ThetaVector,
    bases: &[KleBasis],
    layout: &CouplingLayout,
) -> Result<Field> {
    let uncoupled = assemble_uncoupled(theta, bases, layout)?;
    Ok(Field::new(
        FieldRole::LogPermeability,
        average_bands(&uncoupled.values, layout),
    ))
}

/// The chain's current θ and last accepted field.
#[derive(Debug, Clone, Copy)]
pub struct LocalAverageState<'a> {
    pub theta: &'a ThetaVector,
    pub eta: &'a Field,
}

/// Rewrite `Ω_active` from `theta_star` and average its band cells against the
/// previously accepted field. Cells outside `Ω_active` keep `prev.eta` exactly.
pub fn assemble_local_average(
    theta_star: &ThetaVector,
    active: usize,
    prev: LocalAverageState<'_>,
    bases: &[KleBasis],
    layout: &CouplingLayout,
) -> Result<Field> {
    layout.check_theta(theta_star, bases)?;
    if prev.eta.len() != layout.cell_count() || !prev.eta.is_finite() {
        return Err(Error::Contract(
            "previous field does not match the grid or is not finite".into(),
        ));
    }
    if active >= layout.subdomain_count() {
        return Err(Error::Contract(format!(
            "active subdomain {active} out of range"
        )));
    }
    let touched = theta_star.differing_blocks(prev.theta);
    if touched.iter().any(|&b| b != active) {
        return Err(Error::Contract(format!(
            "proposal modifies blocks {touched:?}, only block {active} may change"
        )));
    }

    let mut fresh = prev.eta.values.clone();
    let local = bases[active].expand(theta_star.block(active));
    for (&c, v) in layout.cells_of(active).iter().zip(local) {
        fresh[c] = v;
    }
    let mut out = fresh.clone();
    for &c in layout.cells_of(active) {
        if let Some(set) = layout.stencil(c) {
            out[c] = set.iter().map(|&k| fresh[k]).sum::<f64>() / set.len() as f64;
        }
    }
    Ok(Field::new(FieldRole::LogPermeability, out))
}

/// Global functions `Ψ_j` with `G(θ) = Σ_j √λ_j θ_j Ψ_j` for the linear couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedBasis {
    /// `columns[j]` is `Ψ_j` over all cells; `j` follows the θ layout.
    pub columns: Vec<Vec<f64>>,
    pub sqrt_lambda: Vec<f64>,
}

pub fn extended_basis(
    kind: &CouplingKind,
    bases: &[KleBasis],
    layout: &CouplingLayout,
) -> Result<ExtendedBasis> {
    if !kind.is_linear() {
        return Err(Error::Unsupported(
            "local averaging has no extended basis: the generated field depends on the acceptance \
             history, so the chain is no longer a Markov chain in theta"
                .into(),
        ));
    }
    layout.check_bases(bases)?;
    let mut columns = Vec::new();
    let mut sqrt_lambda = Vec::new();
    for (s, basis) in bases.iter().enumerate() {
        for (lambda, mode) in basis.eigenvalues.iter().zip(&basis.modes) {
            let mut extended = vec![0.0; layout.cell_count()];
            for (&c, &psi) in layout.cells_of(s).iter().zip(mode) {
                extended[c] = psi;
            }
            if matches!(kind, CouplingKind::GlobalAverage { .. }) {
                extended = average_bands(&extended, layout);
            }
            columns.push(extended);
            sqrt_lambda.push(lambda.sqrt());
        }
    }
    Ok(ExtendedBasis {
        columns,
        sqrt_lambda,
    })
}

impl ExtendedBasis {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn assemble(&self, theta: &[f64]) -> Field {
        let n = self.columns.first().map_or(0, Vec::len);
        let mut eta = vec![0.0; n];
        for ((col, s), t) in self.columns.iter().zip(&self.sqrt_lambda).zip(theta) {
            let a = s * t;
            for (e, psi) in eta.iter_mut().zip(col) {
                *e += a * psi;
            }
        }
        Field::new(FieldRole::LogPermeability, eta)
    }

    /// Dense `cells × N` matrix whose columns are the `Ψ_j`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.columns.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, self.dim(), |r, c| self.columns[c][r])
    }

    /// CSV dump: one row per cell, one column per `Ψ_j`, preceded by a `sqrt_lambda` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cell".to_string()];
        header.extend((0..self.dim()).map(|j| format!("psi_{j}")));
        w.write_record(&header)?;
        let mut row = vec!["sqrt_lambda".to_string()];
        row.extend(self.sqrt_lambda.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
        let n = self.columns.first().map_or(0, Vec::len);
        for c in 0..n {
            let mut row = vec![c.to_string()];
            row.extend(self.columns.iter().map(|col| col[c].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Numerical rank of the span of `vectors` (relative singular-value cutoff `rel_tol`).
pub fn numerical_rank(vectors: &[Vec<f64>], rel_tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let n = vectors[0].len();
    let m = DMatrix::from_fn(n, vectors.len(), |r, c| vectors[c][r]);
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Result of fitting generated 1D fields to the six-coefficient form
/// `(a, b, c, d, e, g)` valid once each subdomain has accepted a proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanReport {
    pub rank: usize,
    /// Least-squares coefficients `[a, b, c, d, e, g]` per field (minimum norm).
    pub coefficients: Vec<[f64; 6]>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Design matrix of the six-coefficient form on the single-point band geometry.
///
/// Columns: `e·√λ₁ψ₁` on R1, `a·√λ₁ψ₁(x)` and `b·√λ₂ψ₂(x+h)` on R2,
/// `c·√λ₁ψ₁(x−h)` and `d·√λ₂ψ₂(x)` on R3, `g·√λ₂ψ₂` on R4 (order a, b, c, d, e, g).
pub fn six_coefficient_design(grid: &Grid1D, bases: &[KleBasis]) -> Result<DMatrix<f64>> {
    if bases.len() != 2 || bases.iter().any(|b| b.n_c() != 1) {
        return Err(Error::Contract(
            "the six-coefficient form needs two subdomains with one mode each".into(),
        ));
    }
    let r2 = grid.points_in(Region::R2);
    let r3 = grid.points_in(Region::R3);
    if r2.len() != 1 || r3.len() != 1 {
        return Err(Error::Contract(
            "the six-coefficient form needs single-point bands".into(),
        ));
    }
    let (p2, p3) = (r2[0], r3[0]);
    let s1 = bases[0].eigenvalues[0].sqrt();
    let s2 = bases[1].eigenvalues[0].sqrt();
    let psi1 = &bases[0].modes[0];
    let psi2 = &bases[1].modes[0];
    let n1 = psi1.len();
    let psi1_at = |k: usize| psi1[k];
    let psi2_at = |k: usize| psi2[k - n1];
    let mut d = DMatrix::zeros(grid.len(), 6);
    for k in 0..grid.len() {
        match grid.region_of(k) {
            Region::R1 => d[(k, 4)] = s1 * psi1_at(k),
            Region::R2 => {
                d[(k, 0)] = s1 * psi1_at(k);
                d[(k, 1)] = s2 * psi2_at(p3);
            }
            Region::R3 => {
                d[(k, 2)] = s1 * psi1_at(p2);
                d[(k, 3)] = s2 * psi2_at(k);
            }
            Region::R4 => d[(k, 5)] = s2 * psi2_at(k),
        }
    }
    Ok(d)
}

/// Rank of the span of `fields` and their fit to the six-coefficient form.
pub fn local_average_span_probe(
    fields: &[Field],
    grid: &Grid1D,
    bases: &[KleBasis],
) -> Result<SpanReport> {
    let design = six_coefficient_design(grid, bases)?;
    let svd = design.clone().svd(true, true);
    let mut coefficients = Vec::with_capacity(fields.len());
    let mut residuals = Vec::with_capacity(fields.len());
    for f in fields {
        if f.len() != grid.len() {
            return Err(Error::Contract(
                "field length does not match the 1D grid".into(),
            ));
        }
        let rhs = DVector::from_column_slice(&f.values);
        let x = svd
            .solve(&rhs, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::Invariant(e.to_string()))?;
        let r = (&design * &x - &rhs).amax();
        coefficients.push([x[0], x[1], x[2], x[3], x[4], x[5]]);
        residuals.push(r);
    }
    let vectors: Vec<Vec<f64>> = fields.iter().map(|f| f.values.clone()).collect();
    Ok(SpanReport {
        rank: numerical_rank(&vectors, 1e-10),
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        coefficients,
        residuals,
    })
}
