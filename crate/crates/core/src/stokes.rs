//! Minimum-energy right inverse of the MAC divergence on a set of active
//! cells.
//!
//! Given `f` on the active cells with zero sum, [`MacStokes::solve`] returns
//! the face field `u` minimizing the discrete Dirichlet energy
//! `||grad_h u||^2` subject to `div_h u = f` on every active cell and
//! `u = 0` on every face that is not shared by two active cells. The
//! optimality system is the discrete Stokes problem
//!
//! ```text
//! A u + B^T p = 0,   B u = f
//! ```
//!
//! solved by conjugate gradients on the pressure Schur complement
//! `S = B A^{-1} B^T` with exact inner solves for `A`.

use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, BandedCholesky, EdgeCondition, SeparableLaplace};
use crate::mac::{FaceField, FieldKind, Grid};

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
enum VelocitySolver {
    /// Every cell active and walls on all four sides.
    Spectral { x: SeparableLaplace, y: SeparableLaplace },
    Banded { x: BandedCholesky, y: BandedCholesky },
}

/// Output of a constrained minimum-energy solve.
#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub field: FaceField,
    pub iterations: usize,
    /// `max |div_h u - f|` over active cells.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct MacStokes {
    grid: Grid,
    active: Vec<bool>,
    cells: Vec<usize>,
    xdofs: Vec<usize>,
    ydofs: Vec<usize>,
    xmap: Vec<usize>,
    ymap: Vec<usize>,
    velocity: VelocitySolver,
    pub max_iterations: usize,
}

impl MacStokes {
    /// All cells of the rectangle active, no-slip walls on its boundary.
    pub fn full(grid: Grid) -> Self {
        let active = vec![true; grid.cell_count()];
        let mut s = Self::layout(grid, active);
        s.velocity = VelocitySolver::Spectral {
            x: SeparableLaplace::new(
                grid.nx,
                EdgeCondition::NodeDirichlet,
                grid.ny,
                EdgeCondition::HalfCellDirichlet,
                grid.h,
            ),
            y: SeparableLaplace::new(
                grid.nx,
                EdgeCondition::HalfCellDirichlet,
                grid.ny,
                EdgeCondition::NodeDirichlet,
                grid.h,
            ),
        };
        s
    }

    /// Arbitrary active set; faces not shared by two active cells are fixed
    /// to zero. Tangential neighbours outside the active set are zero at
    /// their face positions; the rectangle edges use the half-cell wall.
    pub fn masked(grid: Grid, active: Vec<bool>) -> Result<Self> {
        assert_eq!(active.len(), grid.cell_count());
        let mut s = Self::layout(grid, active);
        let x = BandedCholesky::factor(s.xdofs.len(), &s.component_matrix(FieldKind::XFace))
            .ok_or_else(|| Error::InvalidConfig("velocity block is singular".into()))?;
        let y = BandedCholesky::factor(s.ydofs.len(), &s.component_matrix(FieldKind::YFace))
            .ok_or_else(|| Error::InvalidConfig("velocity block is singular".into()))?;
        s.velocity = VelocitySolver::Banded { x, y };
        Ok(s)
    }

    fn layout(grid: Grid, active: Vec<bool>) -> Self {
        let g = grid;
        let cells: Vec<usize> = (0..g.cell_count()).filter(|&c| active[c]).collect();
        let mut xmap = vec![NONE; g.len(FieldKind::XFace)];
        let mut xdofs = Vec::new();
        for j in 0..g.ny {
            for i in 1..g.nx {
                if active[g.cell(i - 1, j)] && active[g.cell(i, j)] {
                    xmap[g.xface(i, j)] = xdofs.len();
                    xdofs.push(g.xface(i, j));
                }
            }
        }
        let mut ymap = vec![NONE; g.len(FieldKind::YFace)];
        let mut ydofs = Vec::new();
        for j in 1..g.ny {
            for i in 0..g.nx {
                if active[g.cell(i, j - 1)] && active[g.cell(i, j)] {
                    ymap[g.yface(i, j)] = ydofs.len();
                    ydofs.push(g.yface(i, j));
                }
            }
        }
        Self {
            grid,
            active,
            cells,
            xdofs,
            ydofs,
            xmap,
            ymap,
            velocity: VelocitySolver::Banded {
                x: BandedCholesky::factor(0, &[]).expect("empty"),
                y: BandedCholesky::factor(0, &[]).expect("empty"),
            },
            max_iterations: 5000,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn unknowns(&self) -> usize {
        self.xdofs.len() + self.ydofs.len()
    }

    /// Lower-triangular triplets of `h^2 A` for one velocity component.
    fn component_matrix(&self, kind: FieldKind) -> Vec<(usize, usize, f64)> {
        let g = self.grid;
        let inv_h2 = 1.0 / (g.h * g.h);
        let mut entries = Vec::new();
        let (dofs, map) = match kind {
            FieldKind::XFace => (&self.xdofs, &self.xmap),
            FieldKind::YFace => (&self.ydofs, &self.ymap),
            FieldKind::Cell => unreachable!(),
        };
        for (row, &face) in dofs.iter().enumerate() {
            let (i, j, ni, nj) = match kind {
                FieldKind::XFace => (face % (g.nx + 1), face / (g.nx + 1), g.nx + 1, g.ny),
                _ => (face % g.nx, face / g.nx, g.nx, g.ny + 1),
            };
            let mut diag = 0.0;
            let neighbours = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)];
            for (di, dj) in neighbours {
                let ii = i as i64 + di;
                let jj = j as i64 + dj;
                let tangential = match kind {
                    FieldKind::XFace => dj != 0,
                    _ => di != 0,
                };
                if ii < 0 || jj < 0 || ii >= ni as i64 || jj >= nj as i64 {
                    // only tangential neighbours can leave the face lattice
                    diag += if tangential { 2.0 } else { 1.0 };
                    continue;
                }
                diag += 1.0;
                let nb = jj as usize * ni + ii as usize;
                let col = map[nb];
                if col != NONE && col < row {
                    entries.push((row, col, -inv_h2));
                }
            }
            entries.push((row, row, diag * inv_h2));
        }
        entries
    }

    /// `B^T p` scattered onto the velocity unknowns (`(p_left - p_right)/h`).
    fn grad_t(&self, p: &[f64], bx: &mut [f64], by: &mut [f64]) {
        let g = self.grid;
        for (k, &face) in self.xdofs.iter().enumerate() {
            let (i, j) = (face % (g.nx + 1), face / (g.nx + 1));
            bx[k] = (p[g.cell(i - 1, j)] - p[g.cell(i, j)]) / g.h;
        }
        for (k, &face) in self.ydofs.iter().enumerate() {
            let (i, j) = (face % g.nx, face / g.nx);
            by[k] = (p[g.cell(i, j - 1)] - p[g.cell(i, j)]) / g.h;
        }
    }

    fn solve_velocity(&self, bx: &mut [f64], by: &mut [f64]) {
        match &self.velocity {
            VelocitySolver::Banded { x, y } => {
                x.solve_in_place(bx);
                y.solve_in_place(by);
            }
            VelocitySolver::Spectral { x, y } => {
                x.solve_in_place(bx);
                y.solve_in_place(by);
            }
        }
    }

    fn scatter(&self, ux: &[f64], uy: &[f64]) -> FaceField {
        let mut out = FaceField::zeros(self.grid);
        for (k, &face) in self.xdofs.iter().enumerate() {
            out.ux[face] = ux[k];
        }
        for (k, &face) in self.ydofs.iter().enumerate() {
            out.uy[face] = uy[k];
        }
        out
    }

    /// `div_h` of the unknowns restricted to the active cells (full-grid
    /// indexing, zero elsewhere).
    fn div(&self, ux: &[f64], uy: &[f64], out: &mut [f64]) {
        let g = self.grid;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &face) in self.xdofs.iter().enumerate() {
            let (i, j) = (face % (g.nx + 1), face / (g.nx + 1));
            out[g.cell(i - 1, j)] += ux[k] / g.h;
            out[g.cell(i, j)] -= ux[k] / g.h;
        }
        for (k, &face) in self.ydofs.iter().enumerate() {
            let (i, j) = (face % g.nx, face / g.nx);
            out[g.cell(i, j - 1)] += uy[k] / g.h;
            out[g.cell(i, j)] -= uy[k] / g.h;
        }
    }

    /// `u = -A^{-1} B^T p`; returns `(ux, uy)` and writes `B u` into `bu`.
    fn velocity_of(&self, p: &[f64], bu: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
        let mut bx = vec![0.0; self.xdofs.len()];
        let mut by = vec![0.0; self.ydofs.len()];
        self.grad_t(p, &mut bx, &mut by);
        self.solve_velocity(&mut bx, &mut by);
        bx.iter_mut().for_each(|v| *v = -*v);
        by.iter_mut().for_each(|v| *v = -*v);
        self.div(&bx, &by, bu);
        (bx, by)
    }

    fn project_mean(&self, v: &mut [f64]) {
        if self.cells.is_empty() {
            return;
        }
        let m = self.cells.iter().map(|&c| v[c]).sum::<f64>() / self.cells.len() as f64;
        for &c in &self.cells {
            v[c] -= m;
        }
    }

    /// Solves `div_h u = f` on the active cells. `f` uses full-grid cell
    /// indexing; values on inactive cells are ignored. The sum of `f` over
    /// the active cells must vanish to `1e-12` relative to its size.
    pub fn solve(&self, f: &[f64], tol: f64) -> Result<StokesSolution> {
        let g = self.grid;
        assert_eq!(f.len(), g.cell_count());
        let mut rhs = vec![0.0; g.cell_count()];
        for &c in &self.cells {
            rhs[c] = f[c];
        }
        let sum: f64 = self.cells.iter().map(|&c| rhs[c]).sum();
        let norm = self.cells.iter().map(|&c| rhs[c].abs()).sum::<f64>();
        if sum.abs() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::NonZeroMean {
                mean: sum / self.cells.len().max(1) as f64,
                norm: norm / self.cells.len().max(1) as f64,
            });
        }
        let fmax = max_abs(&rhs);
        if fmax == 0.0 {
            return Ok(StokesSolution { field: FaceField::zeros(g), iterations: 0, residual: 0.0 });
        }
        self.project_mean(&mut rhs);

        // CG on S p = -f, residual r = -f - S p = B u - f.
        let n = g.cell_count();
        let mut p = vec![0.0; n];
        let mut r: Vec<f64> = rhs.iter().map(|v| -v).collect();
        let mut d = r.clone();
        let mut sd = vec![0.0; n];
        let mut rr = dot(&r, &r);
        let mut it = 0;
        let target = tol * fmax;
        loop {
            if max_abs(&r) <= 0.5 * target {
                let mut bu = vec![0.0; n];
                let (ux, uy) = self.velocity_of(&p, &mut bu);
                let residual = self
                    .cells
                    .iter()
                    .map(|&c| (bu[c] - f[c]).abs())
                    .fold(0.0_f64, f64::max);
                if residual <= target {
                    return Ok(StokesSolution { field: self.scatter(&ux, &uy), iterations: it, residual });
                }
                // drifted recurrence: restart from the true residual
                for &c in &self.cells {
                    r[c] = bu[c] - rhs[c];
                }
                self.project_mean(&mut r);
                d.copy_from_slice(&r);
                rr = dot(&r, &r);
            }
            if it >= self.max_iterations {
                return Err(Error::SolverDivergence { iterations: it, residual: max_abs(&r) / fmax });
            }
            // S d = B A^{-1} B^T d = -B u(d)
            self.velocity_of(&d, &mut sd);
            sd.iter_mut().for_each(|v| *v = -*v);
            self.project_mean(&mut sd);
            let dsd = dot(&d, &sd);
            if dsd <= 0.0 {
                return Err(Error::SolverDivergence { iterations: it, residual: max_abs(&r) / fmax });
            }
            let alpha = rr / dsd;
            for k in 0..n {
                p[k] += alpha * d[k];
                r[k] -= alpha * sd[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..n {
                d[k] = r[k] + beta * d[k];
            }
            it += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::CellField;

    fn sample_rhs(g: Grid) -> Vec<f64> {
        let f = CellField::from_fn(g, |p| {
            (2.0 * std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).cos() + p[0] - 0.5
        });
        let m = f.mean();
        f.values.iter().map(|v| v - m).collect()
    }

    #[test]
    fn spectral_and_banded_velocity_blocks_agree() {
        let g = Grid::unit_square(12);
        let full = MacStokes::full(g);
        let banded = MacStokes::masked(g, vec![true; g.cell_count()]).unwrap();
        let f = sample_rhs(g);
        let a = full.solve(&f, 1e-11).unwrap();
        let b = banded.solve(&f, 1e-11).unwrap();
        let diff = a.field.ux.iter().zip(&b.field.ux).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff {diff}");
    }

    #[test]
    fn solution_satisfies_divergence_constraint() {
        let g = Grid::unit_square(16);
        let s = MacStokes::full(g);
        let f = sample_rhs(g);
        let sol = s.solve(&f, 1e-11).unwrap();
        let div = sol.field.divergence();
        for (d, fv) in div.values.iter().zip(&f) {
            assert!((d - fv).abs() < 1e-10);
        }
        assert_eq!(sol.field.boundary_trace(), 0.0);
    }

    #[test]
    fn masked_solution_vanishes_off_the_active_set() {
        let g = Grid::unit_square(16);
        let c = [0.5, 0.5];
        let active: Vec<bool> = (0..g.cell_count())
            .map(|k| {
                let p = g.position(FieldKind::Cell, k);
                let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                (0.1..0.45).contains(&r)
            })
            .collect();
        let s = MacStokes::masked(g, active.clone()).unwrap();
        let mut f: Vec<f64> = (0..g.cell_count())
            .map(|k| if active[k] { g.position(FieldKind::Cell, k)[0] - 0.5 } else { 0.0 })
            .collect();
        let n = active.iter().filter(|a| **a).count() as f64;
        let m = f.iter().sum::<f64>() / n;
        for k in 0..f.len() {
            if active[k] {
                f[k] -= m;
            }
        }
        let sol = s.solve(&f, 1e-11).unwrap();
        let div = sol.field.divergence();
        for k in 0..g.cell_count() {
            if active[k] {
                assert!((div.values[k] - f[k]).abs() < 1e-10);
            } else {
                assert!(div.values[k].abs() < 1e-10 || !active[k]);
            }
        }
        // faces touching an inactive cell are exactly zero
        for j in 0..g.ny {
            for i in 1..g.nx {
                if !active[g.cell(i - 1, j)] || !active[g.cell(i, j)] {
                    assert_eq!(sol.field.ux[g.xface(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_nonzero_mean() {
        let g = Grid::unit_square(8);
        let s = MacStokes::full(g);
        let f = vec![1.0; g.cell_count()];
        assert!(matches!(s.solve(&f, 1e-10), Err(Error::NonZeroMean { .. })));
    }
}
