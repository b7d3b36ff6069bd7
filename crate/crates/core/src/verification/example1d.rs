//! The two-subdomain 1D geometry: closed-form coupled fields and the scripted
//! local-averaging history.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::coupling::{
    assemble_global_average, assemble_local_average, assemble_uncoupled, extended_basis,
    local_average_span_probe, numerical_rank, six_coefficient_design, CouplingKind, CouplingLayout,
    LocalAverageState, SpanReport, Stencil1D,
};
use crate::error::{Error, Result};
use crate::field::{Field, ThetaVector};
use crate::grid::{Grid1D, Region};
use crate::random_field::{local_kle_1d, CovarianceParams, KleBasis};

use super::prior_on_v::prior_on_v_check;

/// One mode per subdomain on a 1D grid with single-point bands.
#[derive(Debug, Clone)]
pub struct ExampleGeometry {
    pub grid: Grid1D,
    pub bases: Vec<KleBasis>,
    /// The R2 and R3 points.
    pub p2: usize,
    pub p3: usize,
}

impl ExampleGeometry {
    pub fn new(per_subdomain: usize, corr_len: f64) -> Result<Self> {
        let h = 0.5 / per_subdomain as f64;
        let grid = Grid1D::two_subdomain(per_subdomain, 1, h)?;
        let params = CovarianceParams::new(1.0, corr_len, corr_len)?;
        let bases = vec![
            local_kle_1d(&grid, 0, &params, 1)?,
            local_kle_1d(&grid, 1, &params, 1)?,
        ];
        let p2 = grid.points_in(Region::R2)[0];
        let p3 = grid.points_in(Region::R3)[0];
        Ok(Self {
            grid,
            bases,
            p2,
            p3,
        })
    }

    pub fn default_example() -> Self {
        Self::new(4, 0.3).expect("fixed example geometry is valid")
    }

    fn n1(&self) -> usize {
        self.bases[0].cell_count()
    }

    pub fn psi1(&self, k: usize) -> f64 {
        self.bases[0].modes[0][k]
    }

    pub fn psi2(&self, k: usize) -> f64 {
        self.bases[1].modes[0][k - self.n1()]
    }

    pub fn sqrt_lambda(&self) -> (f64, f64) {
        (
            self.bases[0].eigenvalues[0].sqrt(),
            self.bases[1].eigenvalues[0].sqrt(),
        )
    }

    /// Band points averaged only with each other.
    pub fn layout_a(&self) -> CouplingLayout {
        CouplingLayout::from_grid1d(&self.grid, Stencil1D::BandOnly(self.grid.h()))
    }

    /// Band points averaged with both immediate neighbours.
    pub fn layout_b(&self) -> CouplingLayout {
        CouplingLayout::from_grid1d(&self.grid, Stencil1D::Radius(self.grid.h()))
    }

    pub fn theta(&self, t1: f64, t2: f64) -> ThetaVector {
        ThetaVector::new(vec![t1, t2], 1).expect("two blocks of one")
    }

    /// Closed-form global basis `(Ψ_1, Ψ_2)` of Example A.
    pub fn example_a_basis(&self) -> (Vec<f64>, Vec<f64>) {
        let (p2, p3) = (self.p2, self.p3);
        let n = self.grid.len();
        let mut psi1 = vec![0.0; n];
        let mut psi2 = vec![0.0; n];
        for k in 0..n {
            match self.grid.region_of(k) {
                Region::R1 => psi1[k] = self.psi1(k),
                Region::R2 => {
                    psi1[k] = 0.5 * self.psi1(k);
                    psi2[k] = 0.5 * self.psi2(p3);
                }
                Region::R3 => {
                    psi1[k] = 0.5 * self.psi1(p2);
                    psi2[k] = 0.5 * self.psi2(k);
                }
                Region::R4 => psi2[k] = self.psi2(k),
            }
        }
        (psi1, psi2)
    }

    /// Closed-form global basis `(Ψ_1, Ψ_2)` of Example B.
    pub fn example_b_basis(&self) -> (Vec<f64>, Vec<f64>) {
        let (p2, p3) = (self.p2, self.p3);
        let n = self.grid.len();
        let third = 1.0 / 3.0;
        let mut psi1 = vec![0.0; n];
        let mut psi2 = vec![0.0; n];
        for k in 0..n {
            match self.grid.region_of(k) {
                Region::R1 => psi1[k] = self.psi1(k),
                Region::R2 => {
                    psi1[k] = third * (self.psi1(k - 1) + self.psi1(k));
                    psi2[k] = third * self.psi2(p3);
                }
                Region::R3 => {
                    psi1[k] = third * self.psi1(p2);
                    psi2[k] = third * (self.psi2(k) + self.psi2(k + 1));
                }
                Region::R4 => psi2[k] = self.psi2(k),
            }
        }
        (psi1, psi2)
    }

    /// `√λ₁θ₁Ψ₁ + √λ₂θ₂Ψ₂` from a closed-form basis.
    pub fn combine(&self, basis: &(Vec<f64>, Vec<f64>), t1: f64, t2: f64) -> Vec<f64> {
        let (s1, s2) = self.sqrt_lambda();
        basis
            .0
            .iter()
            .zip(&basis.1)
            .map(|(a, b)| s1 * a * t1 + s2 * b * t2)
            .collect()
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleAbReport {
    pub a_field_error: f64,
    pub a_basis_error: f64,
    pub b_field_error: f64,
    pub b_basis_error: f64,
}

impl ExampleAbReport {
    pub fn max_error(&self) -> f64 {
        self.a_field_error
            .max(self.a_basis_error)
            .max(self.b_field_error)
            .max(self.b_basis_error)
    }
}

/// Assembled fields and extended bases against the piecewise displays of both examples.
pub fn example_ab_check(geo: &ExampleGeometry, thetas: &[(f64, f64)]) -> Result<ExampleAbReport> {
    let kind = CouplingKind::GlobalAverage {
        ellipse: Default::default(),
    };
    let mut report = ExampleAbReport {
        a_field_error: 0.0,
        a_basis_error: 0.0,
        b_field_error: 0.0,
        b_basis_error: 0.0,
    };
    for (layout, closed, field_err, basis_err) in [
        (
            geo.layout_a(),
            geo.example_a_basis(),
            &mut report.a_field_error,
            &mut report.a_basis_error,
        ),
        (
            geo.layout_b(),
            geo.example_b_basis(),
            &mut report.b_field_error,
            &mut report.b_basis_error,
        ),
    ] {
        let ext = extended_basis(&kind, &geo.bases, &layout)?;
        *basis_err = max_diff(&ext.columns[0], &closed.0).max(max_diff(&ext.columns[1], &closed.1));
        for &(t1, t2) in thetas {
            let eta = assemble_global_average(&geo.theta(t1, t2), &geo.bases, &layout)?;
            *field_err = field_err.max(max_diff(&eta.values, &geo.combine(&closed, t1, t2)));
        }
    }
    Ok(report)
}

/// Fixed coefficient draws for the scripted history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryDraws {
    pub t1_0: f64,
    pub t2_0: f64,
    pub t1_1: f64,
    pub t2_2: f64,
    pub t1_3: f64,
}

impl Default for HistoryDraws {
    fn default() -> Self {
        Self {
            t1_0: 0.7,
            t2_0: -0.4,
            t1_1: 1.3,
            t2_2: 0.9,
            t1_3: -1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub label: String,
    /// Max error per region R1..R4.
    pub region_errors: [f64; 4],
}

impl HistoryRow {
    pub fn max_error(&self) -> f64 {
        self.region_errors.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct HistoryReport {
    pub rows: Vec<HistoryRow>,
    pub fields: Vec<Field>,
    pub span: SpanReport,
    /// Closed-form `(a, b, c, d, e, g)` for the all-accepted history.
    pub six_form_coefficients: [f64; 6],
    /// Error of the closed-form six-coefficient reconstruction of the all-accepted field.
    pub six_form_error: f64,
    pub global_average_rank: usize,
    /// Message of the one-to-one refusal for local averaging.
    pub refusal: Option<String>,
}

impl HistoryReport {
    pub fn max_error(&self) -> f64 {
        self.rows
            .iter()
            .map(HistoryRow::max_error)
            .fold(self.six_form_error, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < 1e-12
            && self.span.max_residual < 1e-10
            && self.span.rank == 4
            && self.global_average_rank == 2
            && self.refusal.is_some()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<44} {:>10} {:>10} {:>10} {:>10}",
            "field", "R1", "R2", "R3", "R4"
        );
        for row in &self.rows {
            let e = row.region_errors;
            let _ = writeln!(
                out,
                "{:<44} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
                row.label, e[0], e[1], e[2], e[3]
            );
        }
        let c = self.six_form_coefficients;
        let _ = writeln!(
            out,
            "six-coefficient form: a={:.6} b={:.6} c={:.6} d={:.6} e={:.6} g={:.6} (error {:.2e})",
            c[0], c[1], c[2], c[3], c[4], c[5], self.six_form_error
        );
        let _ = writeln!(
            out,
            "span rank {} (global average {}), max fit residual {:.2e}",
            self.span.rank, self.global_average_rank, self.span.max_residual
        );
        if let Some(r) = &self.refusal {
            let _ = writeln!(out, "prior on V: {r}");
        }
        out
    }
}

/// Expected values on each region as `[R1-or-value-fn, ...]`.
struct Expected<'g> {
    geo: &'g ExampleGeometry,
    r1: f64,
    r2: f64,
    r3: f64,
    r4: f64,
}

impl Expected<'_> {
    /// `r1` and `r4` are coefficients of `√λψ`; `r2`, `r3` are the point values.
    fn field(&self) -> Vec<f64> {
        let (s1, s2) = self.geo.sqrt_lambda();
        (0..self.geo.grid.len())
            .map(|k| match self.geo.grid.region_of(k) {
                Region::R1 => s1 * self.geo.psi1(k) * self.r1,
                Region::R2 => self.r2,
                Region::R3 => self.r3,
                Region::R4 => s2 * self.geo.psi2(k) * self.r4,
            })
            .collect()
    }
}

fn region_errors(geo: &ExampleGeometry, got: &Field, want: &[f64]) -> [f64; 4] {
    let mut e = [0.0f64; 4];
    for k in 0..geo.grid.len() {
        let r = match geo.grid.region_of(k) {
            Region::R1 => 0,
            Region::R2 => 1,
            Region::R3 => 2,
            Region::R4 => 3,
        };
        e[r] = e[r].max((got.values[k] - want[k]).abs());
    }
    e
}

struct Chain<'g> {
    geo: &'g ExampleGeometry,
    layout: CouplingLayout,
    theta: ThetaVector,
    eta: Field,
}

impl Chain<'_> {
    fn propose(&self, active: usize, value: f64) -> Result<(ThetaVector, Field)> {
        let mut star = self.theta.clone();
        star.block_mut(active)[0] = value;
        let eta = assemble_local_average(
            &star,
            active,
            LocalAverageState {
                theta: &self.theta,
                eta: &self.eta,
            },
            &self.geo.bases,
            &self.layout,
        )?;
        Ok((star, eta))
    }

    fn step(&mut self, active: usize, value: f64, accept: bool) -> Result<Field> {
        let (star, eta) = self.propose(active, value)?;
        if accept {
            self.theta = star;
            self.eta = eta.clone();
        }
        Ok(eta)
    }
}

/// Drive local averaging through the scripted three iterations under every
/// acceptance history and compare with the closed-form fields.
pub fn local_average_history_demo(geo: &ExampleGeometry, d: HistoryDraws) -> Result<HistoryReport> {
    let layout = geo.layout_a();
    let (s1, s2) = geo.sqrt_lambda();
    let a1 = s1 * geo.psi1(geo.p2);
    let a2 = s2 * geo.psi2(geo.p3);

    let start = || -> Result<Chain> {
        let theta = geo.theta(d.t1_0, d.t2_0);
        let eta = assemble_uncoupled(&theta, &geo.bases, &layout)?;
        Ok(Chain {
            geo,
            layout: layout.clone(),
            theta,
            eta,
        })
    };

    let mut rows = Vec::new();
    let mut fields = Vec::new();
    let mut push = |label: &str, got: Field, want: Expected| {
        rows.push(HistoryRow {
            label: label.into(),
            region_errors: region_errors(geo, &got, &want.field()),
        });
        fields.push(got);
    };

    let eta1 = start()?.step(0, d.t1_1, false)?;
    push(
        "iteration 1",
        eta1,
        Expected {
            geo,
            r1: d.t1_1,
            r2: 0.5 * (a1 * d.t1_1 + a2 * d.t2_0),
            r3: a2 * d.t2_0,
            r4: d.t2_0,
        },
    );

    for accept1 in [true, false] {
        let mut chain = start()?;
        chain.step(0, d.t1_1, accept1)?;
        let eta2 = chain.step(1, d.t2_2, false)?;
        let want = if accept1 {
            Expected {
                geo,
                r1: d.t1_1,
                r2: 0.5 * (a1 * d.t1_1 + a2 * d.t2_0),
                r3: 0.25 * a1 * d.t1_1 + a2 * (0.25 * d.t2_0 + 0.5 * d.t2_2),
                r4: d.t2_2,
            }
        } else {
            Expected {
                geo,
                r1: d.t1_0,
                r2: a1 * d.t1_0,
                r3: 0.5 * a1 * d.t1_0 + 0.5 * a2 * d.t2_2,
                r4: d.t2_2,
            }
        };
        let label = if accept1 {
            "iteration 2, case 1 (1 accepted)"
        } else {
            "iteration 2, case 2 (1 rejected)"
        };
        push(label, eta2, want);
    }

    let mut six_form = ([0.0; 6], 0.0);
    for (accept1, accept2, label) in [
        (false, false, "iteration 3, case 1 (all rejected)"),
        (false, true, "iteration 3, case 2 (rejected, accepted)"),
        (true, false, "iteration 3, case 3 (accepted, rejected)"),
        (true, true, "iteration 3, case 4 (all accepted)"),
    ] {
        let mut chain = start()?;
        chain.step(0, d.t1_1, accept1)?;
        chain.step(1, d.t2_2, accept2)?;
        let eta3 = chain.step(0, d.t1_3, false)?;
        let want = match (accept1, accept2) {
            (false, false) | (true, false) => Expected {
                geo,
                r1: d.t1_3,
                r2: 0.5 * (a1 * d.t1_3 + a2 * d.t2_0),
                r3: a2 * d.t2_0,
                r4: d.t2_0,
            },
            (false, true) => Expected {
                geo,
                r1: d.t1_3,
                r2: a1 * (0.5 * d.t1_3 + 0.25 * d.t1_0) + 0.25 * a2 * d.t2_2,
                r3: 0.5 * a1 * d.t1_0 + 0.5 * a2 * d.t2_2,
                r4: d.t2_2,
            },
            (true, true) => Expected {
                geo,
                r1: d.t1_3,
                r2: a1 * (0.5 * d.t1_3 + 0.125 * d.t1_1) + a2 * (0.125 * d.t2_0 + 0.25 * d.t2_2),
                r3: 0.25 * a1 * d.t1_1 + a2 * (0.25 * d.t2_0 + 0.5 * d.t2_2),
                r4: d.t2_2,
            },
        };
        if accept1 && accept2 {
            let coeffs = [
                0.5 * d.t1_3 + 0.125 * d.t1_1,
                0.125 * d.t2_0 + 0.25 * d.t2_2,
                0.25 * d.t1_1,
                0.25 * d.t2_0 + 0.5 * d.t2_2,
                d.t1_3,
                d.t2_2,
            ];
            let design = six_coefficient_design(&geo.grid, &geo.bases)?;
            let fit = &design * DVector::from_column_slice(&coeffs);
            six_form = (coeffs, max_diff(fit.as_slice(), &eta3.values));
        }
        push(label, eta3, want);
    }

    // A longer mixed history so the span is probed beyond the scripted fields.
    let mut chain = start()?;
    let values = [0.3, -0.8, 1.7, 0.2, -1.4, 0.6, 1.1, -0.5];
    let accepts = [true, false, true, true, false, true, true, true];
    for (k, (&v, &a)) in values.iter().zip(&accepts).enumerate() {
        fields.push(chain.step(k % 2, v, a)?);
    }

    let span = local_average_span_probe(&fields, &geo.grid, &geo.bases)?;
    let global_layout = geo.layout_a();
    let global_fields: Vec<Vec<f64>> = values
        .windows(2)
        .map(|w| {
            assemble_global_average(&geo.theta(w[0], w[1]), &geo.bases, &global_layout)
                .map(|f| f.values)
        })
        .collect::<Result<_>>()?;
    let global_average_rank = numerical_rank(&global_fields, 1e-10);

    let refusal = match prior_on_v_check(
        &CouplingKind::LocalAverage {
            ellipse: Default::default(),
        },
        &geo.bases,
        &layout,
        &[],
    ) {
        Err(Error::NotOneToOne(msg)) => Some(msg),
        _ => None,
    };

    Ok(HistoryReport {
        rows,
        fields,
        span,
        six_form_coefficients: six_form.0,
        six_form_error: six_form.1,
        global_average_rank,
        refusal,
    })
}
