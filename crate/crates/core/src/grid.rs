//! Discretization of the unit square and its partition into subdomains.
//!
//! Values live at cell centers. Cells are indexed row-major: `idx = j * n + i`
//! where `i` runs along x and `j` along y.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform square grid on `[0, 1]²` with `n × n` square cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(
                "grid must have at least one cell per axis".into(),
            ));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.n
    }

    pub fn ny(&self) -> usize {
        self.n
    }

    /// Cell width, stored implicitly as `1 / n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let h = self.h();
        [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.cell_count()).map(|c| self.center(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// An internal subdomain boundary line: `x = k·H_x` (axis X) or `y = k·H_y` (axis Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InternalEdge {
    pub axis: Axis,
    pub k: usize,
}

/// Non-overlapping rectangular partition of a [`Grid`] plus the averaging bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainPartition {
    grid: Grid,
    mc_x: usize,
    mc_y: usize,
    /// Cells per subdomain along x and y.
    sx: usize,
    sy: usize,
    hbar_cells: usize,
    subdomain_of: Vec<usize>,
    band: Vec<bool>,
    cells_of: Vec<Vec<usize>>,
}

/// Partition `grid` into `mc_x × mc_y` subdomains with averaging bands of half-width `hbar`.
///
/// `hbar` must be an integer multiple of `h` and strictly below half the
/// subdomain side. A cell is in the band when its center lies strictly within
/// `hbar` of an internal boundary line.
pub fn build_partition(
    grid: Grid,
    mc_x: usize,
    mc_y: usize,
    hbar: f64,
) -> Result<SubdomainPartition> {
    let h = grid.h();
    if !(hbar >= 0.0) || !hbar.is_finite() {
        return Err(Error::Config(format!(
            "hbar must be a non-negative length, got {hbar}"
        )));
    }
    let k = (hbar / h).round();
    if (k * h - hbar).abs() > 1e-9 * h {
        return Err(Error::Config(format!(
            "hbar = {hbar} is not an integer multiple of h = {h}"
        )));
    }
    SubdomainPartition::new(grid, mc_x, mc_y, k as usize)
}

impl SubdomainPartition {
    /// Same as [`build_partition`] with the band half-width given in cells.
    pub fn new(grid: Grid, mc_x: usize, mc_y: usize, hbar_cells: usize) -> Result<Self> {
        let n = grid.n();
        if mc_x == 0 || mc_y == 0 {
            return Err(Error::Config("subdomain counts must be positive".into()));
        }
        if !n.is_multiple_of(mc_x) || !n.is_multiple_of(mc_y) {
            return Err(Error::Config(format!(
                "grid size {n} is not divisible by the subdomain layout {mc_x}x{mc_y}"
            )));
        }
        let (sx, sy) = (n / mc_x, n / mc_y);
        if 2 * hbar_cells >= sx.min(sy) {
            return Err(Error::Config(format!(
                "hbar = {hbar_cells}h must be strictly below half the subdomain side ({} cells)",
                sx.min(sy)
            )));
        }

        let mut subdomain_of = vec![0; grid.cell_count()];
        let mut band = vec![false; grid.cell_count()];
        let mut cells_of = vec![Vec::with_capacity(sx * sy); mc_x * mc_y];
        for idx in 0..grid.cell_count() {
            let (i, j) = grid.coords(idx);
            let s = (j / sy) * mc_x + i / sx;
            subdomain_of[idx] = s;
            cells_of[s].push(idx);
            band[idx] = !near_edges(i, j, sx, sy, mc_x, mc_y, hbar_cells).is_empty();
        }
        Ok(Self {
            grid,
            mc_x,
            mc_y,
            sx,
            sy,
            hbar_cells,
            subdomain_of,
            band,
            cells_of,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mc_x(&self) -> usize {
        self.mc_x
    }

    pub fn mc_y(&self) -> usize {
        self.mc_y
    }

    /// Number of subdomains `M_C`.
    pub fn count(&self) -> usize {
        self.mc_x * self.mc_y
    }

    /// Subdomain side lengths `(H_x, H_y)`.
    pub fn side(&self) -> (f64, f64) {
        let h = self.grid.h();
        (self.sx as f64 * h, self.sy as f64 * h)
    }

    pub fn cells_per_side(&self) -> (usize, usize) {
        (self.sx, self.sy)
    }

    pub fn hbar_cells(&self) -> usize {
        self.hbar_cells
    }

    pub fn hbar(&self) -> f64 {
        self.hbar_cells as f64 * self.grid.h()
    }

    pub fn subdomain_of(&self, cell: usize) -> usize {
        self.subdomain_of[cell]
    }

    pub fn subdomain_map(&self) -> &[usize] {
        &self.subdomain_of
    }

    pub fn is_band(&self, cell: usize) -> bool {
        self.band[cell]
    }

    pub fn band_mask(&self) -> &[bool] {
        &self.band
    }

    pub fn band_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.band
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(c, _)| c)
    }

    /// Cells of subdomain `s`, in ascending global index order.
    pub fn cells_of(&self, s: usize) -> &[usize] {
        &self.cells_of[s]
    }

    /// Internal boundary lines whose band contains `cell`.
    pub fn band_edges(&self, cell: usize) -> Vec<InternalEdge> {
        let (i, j) = self.grid.coords(cell);
        near_edges(
            i,
            j,
            self.sx,
            self.sy,
            self.mc_x,
            self.mc_y,
            self.hbar_cells,
        )
    }

    pub fn internal_edges(&self) -> Vec<InternalEdge> {
        let xs = (1..self.mc_x).map(|k| InternalEdge { axis: Axis::X, k });
        let ys = (1..self.mc_y).map(|k| InternalEdge { axis: Axis::Y, k });
        xs.chain(ys).collect()
    }

    /// Number of band cells attributed to each internal edge (corner cells count for both).
    pub fn band_cells_per_edge(&self) -> Vec<(InternalEdge, usize)> {
        self.internal_edges()
            .into_iter()
            .map(|e| {
                let count = self
                    .band_cells()
                    .filter(|&c| self.band_edges(c).contains(&e))
                    .count();
                (e, count)
            })
            .collect()
    }

    /// Plain-text description used for golden-file comparisons.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# msm-partition v1");
        let _ = writeln!(out, "n = {}", self.grid.n());
        let _ = writeln!(out, "mc_x = {}", self.mc_x);
        let _ = writeln!(out, "mc_y = {}", self.mc_y);
        let _ = writeln!(out, "hbar_cells = {}", self.hbar_cells);
        let _ = writeln!(out, "# cell i j subdomain band");
        for idx in 0..self.grid.cell_count() {
            let (i, j) = self.grid.coords(idx);
            let _ = writeln!(
                out,
                "{idx} {i} {j} {} {}",
                self.subdomain_of[idx],
                u8::from(self.band[idx])
            );
        }
        out
    }
}

// Distances are compared in half-cell units so the strict inequality is exact.
fn near_edges(
    i: usize,
    j: usize,
    sx: usize,
    sy: usize,
    mc_x: usize,
    mc_y: usize,
    hbar: usize,
) -> Vec<InternalEdge> {
    let mut edges = Vec::new();
    if hbar == 0 {
        return edges;
    }
    let twice_center_x = 2 * i as i64 + 1;
    let twice_center_y = 2 * j as i64 + 1;
    for k in 1..mc_x {
        let twice_line = 2 * (k * sx) as i64;
        if (twice_center_x - twice_line).abs() < 2 * hbar as i64 {
            edges.push(InternalEdge { axis: Axis::X, k });
        }
    }
    for k in 1..mc_y {
        let twice_line = 2 * (k * sy) as i64;
        if (twice_center_y - twice_line).abs() < 2 * hbar as i64 {
            edges.push(InternalEdge { axis: Axis::Y, k });
        }
    }
    edges
}

/// All cells whose center lies in the closed ellipse with semi-axes `(ax, ay)`
/// centered at `cell`, in row-major order. The center cell is always included.
pub fn neighbors_in_ellipse(grid: Grid, cell: usize, ax: f64, ay: f64) -> Vec<usize> {
    assert!(ax > 0.0 && ay > 0.0, "ellipse semi-axes must be positive");
    let n = grid.n() as i64;
    let h = grid.h();
    let (i0, j0) = grid.coords(cell);
    let (i0, j0) = (i0 as i64, j0 as i64);
    let reach_x = (ax / h).floor() as i64;
    let reach_y = (ay / h).floor() as i64;
    let mut out = Vec::new();
    for dj in -reach_y..=reach_y {
        let j = j0 + dj;
        if j < 0 || j >= n {
            continue;
        }
        for di in -reach_x..=reach_x {
            let i = i0 + di;
            if i < 0 || i >= n {
                continue;
            }
            let ex = di as f64 * h / ax;
            let ey = dj as f64 * h / ay;
            if ex * ex + ey * ey <= 1.0 {
                out.push(grid.index(i as usize, j as usize));
            }
        }
    }
    out
}

/// Region labels of the two-subdomain 1D test geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    R2,
    R3,
    R4,
}

/// Two-subdomain 1D grid: `Ω_1 = R1 ∪ R2`, `Ω_2 = R3 ∪ R4`, with the bands
/// `R2`, `R3` adjacent to the common boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    h: f64,
    region_of: Vec<Region>,
}

impl Grid1D {
    /// `per_subdomain` points in each subdomain, of which the `band_points`
    /// closest to the interface form R2 (resp. R3).
    pub fn two_subdomain(per_subdomain: usize, band_points: usize, h: f64) -> Result<Self> {
        if band_points == 0 || band_points >= per_subdomain {
            return Err(Error::Config(format!(
                "band must hold between 1 and {} points, got {band_points}",
                per_subdomain.saturating_sub(1)
            )));
        }
        if !(h > 0.0) {
            return Err(Error::Config("grid spacing must be positive".into()));
        }
        let mut region_of = Vec::with_capacity(2 * per_subdomain);
        region_of.extend(std::iter::repeat_n(Region::R1, per_subdomain - band_points));
        region_of.extend(std::iter::repeat_n(Region::R2, band_points));
        region_of.extend(std::iter::repeat_n(Region::R3, band_points));
        region_of.extend(std::iter::repeat_n(Region::R4, per_subdomain - band_points));
        Ok(Self { h, region_of })
    }

    pub fn len(&self) -> usize {
        self.region_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_of.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.h
    }

    pub fn region_of(&self, k: usize) -> Region {
        self.region_of[k]
    }

    pub fn points_in(&self, region: Region) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.region_of[k] == region)
            .collect()
    }

    pub fn subdomain_of(&self, k: usize) -> usize {
        match self.region_of[k] {
            Region::R1 | Region::R2 => 0,
            Region::R3 | Region::R4 => 1,
        }
    }

    pub fn is_band(&self, k: usize) -> bool {
        matches!(self.region_of[k], Region::R2 | Region::R3)
    }
}
