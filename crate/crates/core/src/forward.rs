//! Forward operator `κ ↦ p` for `∇·(κ∇p) = 0` on the unit square.
//!
//! Boundary conditions are fixed: `p = 0` on the left edge, `p = 1` on the
//! right edge, zero flux on top and bottom. The discretization is cell-centered
//! finite volumes with harmonic-mean face transmissibilities; Dirichlet faces
//! use the half-cell distance to the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldRole};
use crate::grid::Grid;
use crate::linalg::{pcg, CsrMatrix, PcgOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticProblem {
    grid: Grid,
    solver: PcgOptions,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl EllipticProblem {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            solver: PcgOptions::default(),
        }
    }

    pub fn with_solver(mut self, solver: PcgOptions) -> Self {
        self.solver = solver;
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn check_kappa(&self, kappa: &[f64]) -> Result<()> {
        if kappa.len() != self.grid.cell_count() {
            return Err(Error::Contract(format!(
                "permeability has {} values, grid has {} cells",
                kappa.len(),
                self.grid.cell_count()
            )));
        }
        if let Some((c, v)) = kappa
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
        {
            return Err(Error::Domain(format!(
                "permeability must be positive and finite, cell {c} has {v}"
            )));
        }
        Ok(())
    }

    /// System matrix and right-hand side of the finite-volume discretization.
    pub fn assemble(&self, kappa: &[f64]) -> Result<(CsrMatrix, Vec<f64>)> {
        self.check_kappa(kappa)?;
        let g = self.grid;
        let n = g.n();
        let mut rows = vec![Vec::with_capacity(5); g.cell_count()];
        let mut rhs = vec![0.0; g.cell_count()];
        for j in 0..n {
            for i in 0..n {
                let c = g.index(i, j);
                let k = kappa[c];
                if i + 1 < n {
                    let e = g.index(i + 1, j);
                    let t = harmonic(k, kappa[e]);
                    rows[c].push((c, t));
                    rows[c].push((e, -t));
                    rows[e].push((e, t));
                    rows[e].push((c, -t));
                }
                if j + 1 < n {
                    let s = g.index(i, j + 1);
                    let t = harmonic(k, kappa[s]);
                    rows[c].push((c, t));
                    rows[c].push((s, -t));
                    rows[s].push((s, t));
                    rows[s].push((c, -t));
                }
                if i == 0 {
                    rows[c].push((c, 2.0 * k));
                }
                if i + 1 == n {
                    rows[c].push((c, 2.0 * k));
                    rhs[c] += 2.0 * k;
                }
            }
        }
        Ok((CsrMatrix::from_rows(rows), rhs))
    }

    pub fn solve(&self, kappa: &Field) -> Result<Field> {
        let (a, b) = self.assemble(&kappa.values)?;
        let sol = pcg(&a, &b, None, self.solver)?;
        Ok(Field::new(FieldRole::Pressure, sol.x))
    }

    /// Net rightward flux across each vertical grid line `x = i h`, `i = 0..=n`.
    pub fn vertical_line_fluxes(&self, kappa: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.check_kappa(kappa)?;
        let g = self.grid;
        let n = g.n();
        let mut fluxes = vec![0.0; n + 1];
        for j in 0..n {
            let left = g.index(0, j);
            fluxes[0] += 2.0 * kappa[left] * (0.0 - p[left]);
            for i in 0..n - 1 {
                let (a, b) = (g.index(i, j), g.index(i + 1, j));
                fluxes[i + 1] += harmonic(kappa[a], kappa[b]) * (p[a] - p[b]);
            }
            let right = g.index(n - 1, j);
            fluxes[n] += 2.0 * kappa[right] * (p[right] - 1.0);
        }
        Ok(fluxes)
    }
}

pub fn solve_pressure(problem: &EllipticProblem, kappa: &Field) -> Result<Field> {
    problem.solve(kappa)
}

/// Sensor positions and noisy pressure data with diagonal noise `σ_ε² I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub sensors: Vec<[f64; 2]>,
    pub data: Vec<f64>,
    pub noise_variance: f64,
}

impl ObservationModel {
    pub fn new(sensors: Vec<[f64; 2]>, data: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if sensors.len() != data.len() {
            return Err(Error::Config(format!(
                "{} sensors but {} data values",
                sensors.len(),
                data.len()
            )));
        }
        if !(noise_variance > 0.0) {
            return Err(Error::Config(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        for s in &sensors {
            check_sensor(*s)?;
        }
        Ok(Self {
            sensors,
            data,
            noise_variance,
        })
    }
}

fn check_sensor(s: [f64; 2]) -> Result<()> {
    if !(0.0..=1.0).contains(&s[0]) || !(0.0..=1.0).contains(&s[1]) {
        return Err(Error::Config(format!(
            "sensor ({}, {}) lies outside the unit square",
            s[0], s[1]
        )));
    }
    Ok(())
}

/// `k × k` interior lattice at `((a+1)/(k+1), (b+1)/(k+1))`.
pub fn sensor_lattice(k: usize) -> Vec<[f64; 2]> {
    let step = 1.0 / (k + 1) as f64;
    let mut out = Vec::with_capacity(k * k);
    for b in 0..k {
        for a in 0..k {
            out.push([(a + 1) as f64 * step, (b + 1) as f64 * step]);
        }
    }
    out
}

// Interpolation stencil along one axis: lower index and weight of the upper one.
// Outside the hull of cell centers the nearest pair is extrapolated linearly.
fn axis_stencil(coord: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let s = coord * n as f64 - 0.5;
    let i0 = (s.floor().max(0.0) as usize).min(n - 2);
    (i0, s - i0 as f64)
}

/// Bilinear interpolation of a cell-centered field at each sensor.
pub fn observe(p: &Field, grid: Grid, sensors: &[[f64; 2]]) -> Result<Vec<f64>> {
    if p.len() != grid.cell_count() {
        return Err(Error::Contract("field does not match the grid".into()));
    }
    let n = grid.n();
    let one_d = n == 1;
    sensors
        .iter()
        .map(|&s| {
            check_sensor(s)?;
            if one_d {
                return Ok(p.values[0]);
            }
            let (i, tx) = axis_stencil(s[0], n);
            let (j, ty) = axis_stencil(s[1], n);
            let v00 = p.values[grid.index(i, j)];
            let v10 = p.values[grid.index(i + 1, j)];
            let v01 = p.values[grid.index(i, j + 1)];
            let v11 = p.values[grid.index(i + 1, j + 1)];
            Ok((1.0 - tx) * (1.0 - ty) * v00
                + tx * (1.0 - ty) * v10
                + (1.0 - tx) * ty * v01
                + tx * ty * v11)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Fine,
    Coarse,
}

/// Fine and coarse forward problems sharing one observation model.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodPair {
    fine: EllipticProblem,
    coarse: EllipticProblem,
    factor: usize,
    obs: ObservationModel,
}

impl LikelihoodPair {
    pub fn new(fine: Grid, factor: usize, obs: ObservationModel) -> Result<Self> {
        if factor < 2 || !fine.n().is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "coarsening factor {factor} must be at least 2 and divide the grid size {}",
                fine.n()
            )));
        }
        let coarse = Grid::new(fine.n() / factor)?;
        Ok(Self {
            fine: EllipticProblem::new(fine),
            coarse: EllipticProblem::new(coarse),
            factor,
            obs,
        })
    }

    pub fn fine(&self) -> &EllipticProblem {
        &self.fine
    }

    pub fn coarse(&self) -> &EllipticProblem {
        &self.coarse
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn observations(&self) -> &ObservationModel {
        &self.obs
    }

    /// Block-mean of a fine-grid field onto the coarse grid.
    pub fn restrict(&self, eta: &Field) -> Field {
        let fine = self.fine.grid();
        let coarse = self.coarse.grid();
        let mut out = vec![0.0; coarse.cell_count()];
        for idx in 0..fine.cell_count() {
            let (i, j) = fine.coords(idx);
            out[coarse.index(i / self.factor, j / self.factor)] += eta.values[idx];
        }
        let scale = 1.0 / (self.factor * self.factor) as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        Field::new(eta.role, out)
    }

    /// Predicted sensor pressures for a fine-grid log-permeability.
    pub fn predict(&self, eta: &Field, stage: Stage) -> Result<Vec<f64>> {
        if eta.len() != self.fine.grid().cell_count() {
            return Err(Error::Contract(
                "log-permeability must live on the fine grid".into(),
            ));
        }
        let (problem, eta) = match stage {
            Stage::Fine => (&self.fine, eta.clone()),
            Stage::Coarse => (&self.coarse, self.restrict(eta)),
        };
        let p = problem.solve(&eta.exp())?;
        observe(&p, problem.grid(), &self.obs.sensors)
    }
}

/// `−(d − F(e^η))ᵀ Σ⁻¹ (d − F(e^η))`, with no factor ½ in the exponent.
pub fn log_likelihood(eta: &Field, pair: &LikelihoodPair, stage: Stage) -> Result<f64> {
    let predicted = pair.predict(eta, stage)?;
    Ok(misfit(&predicted, &pair.obs))
}

pub fn misfit(predicted: &[f64], obs: &ObservationModel) -> f64 {
    -predicted
        .iter()
        .zip(&obs.data)
        .map(|(p, d)| (d - p) * (d - p))
        .sum::<f64>()
        / obs.noise_variance
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(grid: Grid, v: f64) -> Field {
        Field::new(FieldRole::Permeability, vec![v; grid.cell_count()])
    }

    #[test]
    fn constant_permeability_gives_linear_pressure() {
        let grid = Grid::new(16).unwrap();
        let p = EllipticProblem::new(grid)
            .solve(&constant(grid, 3.0))
            .unwrap();
        for c in 0..grid.cell_count() {
            assert!((p.values[c] - grid.center(c)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn two_layer_profile() {
        let grid = Grid::new(16).unwrap();
        let kappa = Field::new(
            FieldRole::Permeability,
            (0..grid.cell_count())
                .map(|c| if grid.center(c)[0] < 0.5 { 1.0 } else { 2.0 })
                .collect(),
        );
        let p = EllipticProblem::new(grid).solve(&kappa).unwrap();
        // series resistances 1/2 and 1/4: interface pressure 2/3
        let exact = |x: f64| {
            if x < 0.5 {
                4.0 * x / 3.0
            } else {
                2.0 * x / 3.0 + 1.0 / 3.0
            }
        };
        for c in 0..grid.cell_count() {
            assert!((p.values[c] - exact(grid.center(c)[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_invariance_and_symmetry() {
        let grid = Grid::new(8).unwrap();
        let kappa: Vec<f64> = (0..64)
            .map(|c| 1.0 + 0.5 * ((c * 7 % 11) as f64 / 11.0))
            .collect();
        let problem = EllipticProblem::new(grid);
        let (a, _) = problem.assemble(&kappa).unwrap();
        assert!(a.is_symmetric());
        let p1 = problem
            .solve(&Field::new(FieldRole::Permeability, kappa.clone()))
            .unwrap();
        let scaled: Vec<f64> = kappa.iter().map(|k| 4.5 * k).collect();
        let p2 = problem
            .solve(&Field::new(FieldRole::Permeability, scaled))
            .unwrap();
        assert!(p1.max_abs_diff(&p2) < 1e-9);
    }

    #[test]
    fn non_positive_permeability_is_a_domain_error() {
        let grid = Grid::new(4).unwrap();
        let mut k = constant(grid, 1.0);
        k.values[5] = 0.0;
        assert!(matches!(
            EllipticProblem::new(grid).solve(&k),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn observation_interpolation() {
        let grid = Grid::new(8).unwrap();
        let h = grid.h();
        let p = Field::new(
            FieldRole::Pressure,
            (0..64)
                .map(|c| {
                    let [x, y] = grid.center(c);
                    0.3 + 2.0 * x - 0.7 * y
                })
                .collect(),
        );
        let c = grid.index(3, 5);
        assert!((observe(&p, grid, &[grid.center(c)]).unwrap()[0] - p.values[c]).abs() < 1e-15);
        let sensors = [[0.0, 0.0], [1.0, 1.0], [0.123, 0.987], [0.5, 0.5]];
        for (s, v) in sensors.iter().zip(observe(&p, grid, &sensors).unwrap()) {
            assert!((v - (0.3 + 2.0 * s[0] - 0.7 * s[1])).abs() < 1e-12);
        }
        let a = grid.index(2, 4);
        let b = grid.index(3, 4);
        let mid = [
            (grid.center(a)[0] + grid.center(b)[0]) / 2.0,
            grid.center(a)[1],
        ];
        let v = observe(&p, grid, &[mid]).unwrap()[0];
        assert!((v - 0.5 * (p.values[a] + p.values[b])).abs() < 1e-12);
        assert!(observe(&p, grid, &[[1.0 + h, 0.5]]).is_err());
    }

    #[test]
    fn likelihood_conventions() {
        let grid = Grid::new(8).unwrap();
        let eta = Field::new(FieldRole::LogPermeability, vec![0.2; 64]);
        let sensors = sensor_lattice(3);
        let truth = observe(
            &EllipticProblem::new(grid).solve(&eta.exp()).unwrap(),
            grid,
            &sensors,
        )
        .unwrap();
        let obs = ObservationModel::new(sensors.clone(), truth.clone(), 0.01).unwrap();
        let pair = LikelihoodPair::new(grid, 2, obs).unwrap();
        assert!(log_likelihood(&eta, &pair, Stage::Fine).unwrap().abs() < 1e-18);

        let mut shifted = truth;
        shifted[4] += 0.05;
        let pair = LikelihoodPair::new(
            grid,
            2,
            ObservationModel::new(sensors, shifted, 0.01).unwrap(),
        )
        .unwrap();
        let l = log_likelihood(&eta, &pair, Stage::Fine).unwrap();
        assert!((l + 0.05 * 0.05 / 0.01).abs() < 1e-10);
    }

    #[test]
    fn restriction_is_block_mean() {
        let grid = Grid::new(4).unwrap();
        let obs = ObservationModel::new(vec![[0.5, 0.5]], vec![0.5], 1.0).unwrap();
        let pair = LikelihoodPair::new(grid, 2, obs).unwrap();
        let eta = Field::new(FieldRole::LogPermeability, (0..16).map(f64::from).collect());
        let r = pair.restrict(&eta);
        assert_eq!(r.values, vec![2.5, 4.5, 10.5, 12.5]);
        assert!(LikelihoodPair::new(grid, 3, pair.observations().clone()).is_err());
    }

    #[test]
    fn lattice_layout() {
        let s = sensor_lattice(3);
        assert_eq!(s.len(), 9);
        assert_eq!(s[0], [0.25, 0.25]);
        assert_eq!(s[8], [0.75, 0.75]);
    }
}
