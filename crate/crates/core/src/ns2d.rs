//! Explicit staggered finite-volume scheme for isentropic compressible
//! Navier-Stokes, `p = rho^gamma`, on the unit square with holes.
//!
//! Density lives at cell centers, momentum `m = rho_sigma u` on faces with
//! `rho_sigma` the mean of the two adjacent cells. Mass fluxes are upwinded;
//! momentum convection uses half-sums of the primal mass fluxes on the dual
//! cells, so the dual mass balance holds exactly. The pressure gradient uses
//! the freshly updated density (forward-backward in time).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::Mat2;
use crate::domain::{CellState, GridMask, HoleSet};
use crate::error::{Error, Result};
use crate::homogenize::TestDictionary;
use crate::mac::{CellField, FaceField, Grid};

pub fn pressure(rho: f64, gamma: f64) -> f64 {
    rho.max(0.0).powf(gamma)
}

/// `mu (grad u + grad u^T - div u I) + eta div u I` with
/// `grad_u[j][k] = d_k u_j`.
pub fn stress(grad_u: Mat2, mu: f64, eta: f64) -> Mat2 {
    let div = grad_u[0][0] + grad_u[1][1];
    let mut s = [[0.0; 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            let id = if j == k { 1.0 } else { 0.0 };
            s[j][k] = mu * (grad_u[j][k] + grad_u[k][j] - div * id) + eta * div * id;
        }
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyForce {
    Constant([f64; 2]),
    /// Values on x-faces and y-faces.
    Field { fx: Vec<f64>, fy: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidParams {
    pub gamma: f64,
    pub mu: f64,
    pub eta: f64,
    pub force: BodyForce,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self { gamma: 2.5, mu: 1e-3, eta: 0.0, force: BodyForce::Constant([0.0, -0.1]) }
    }
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidConfig(format!("gamma = {} must exceed 1", self.gamma)));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidConfig(format!("mu = {} must be positive", self.mu)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig(format!("eta = {} must be nonnegative", self.eta)));
        }
        Ok(())
    }

    /// Homogenization studies need `gamma > 2` for the convective term to
    /// pass to the limit.
    pub fn validate_for_study(&self) -> Result<()> {
        self.validate()?;
        if !(self.gamma > 2.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {} but homogenization studies require gamma > 2 (convective term restriction)",
                self.gamma
            )));
        }
        Ok(())
    }

    fn force_x(&self, face: usize) -> f64 {
        match &self.force {
            BodyForce::Constant(f) => f[0],
            BodyForce::Field { fx, .. } => fx[face],
        }
    }

    fn force_y(&self, face: usize) -> f64 {
        match &self.force {
            BodyForce::Constant(f) => f[1],
            BodyForce::Field { fy, .. } => fy[face],
        }
    }
}

/// No-slip walls unless periodic in that direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub periodic_x: bool,
    pub periodic_y: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
    pub t: f64,
}

impl FluidState {
    pub fn at_rest(rho: CellField) -> Self {
        let g = rho.grid;
        Self { grid: g, rho: rho.values, mx: vec![0.0; g.len(crate::FieldKind::XFace)], my: vec![0.0; g.len(crate::FieldKind::YFace)], t: 0.0 }
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Face densities `(rho_K + rho_L) / 2`; wall faces use the one
    /// adjacent cell.
    pub fn face_densities(&self, bc: Boundary) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let mut rx = vec![0.0; g.len(crate::FieldKind::XFace)];
        let mut ry = vec![0.0; g.len(crate::FieldKind::YFace)];
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let l = if i == 0 { if bc.periodic_x { g.nx - 1 } else { 0 } } else { i - 1 };
                let r = if i == g.nx { if bc.periodic_x { 0 } else { g.nx - 1 } } else { i };
                rx[g.xface(i, j)] = 0.5 * (self.rho[g.cell(l, j)] + self.rho[g.cell(r, j)]);
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                let b = if j == 0 { if bc.periodic_y { g.ny - 1 } else { 0 } } else { j - 1 };
                let t = if j == g.ny { if bc.periodic_y { 0 } else { g.ny - 1 } } else { j };
                ry[g.yface(i, j)] = 0.5 * (self.rho[g.cell(i, b)] + self.rho[g.cell(i, t)]);
            }
        }
        (rx, ry)
    }

    /// Velocity `m / rho_sigma` (zero where the face density vanishes).
    pub fn velocity(&self, bc: Boundary) -> FaceField {
        let (rx, ry) = self.face_densities(bc);
        let div = |m: f64, r: f64| if r > 0.0 { m / r } else { 0.0 };
        FaceField {
            grid: self.grid,
            ux: self.mx.iter().zip(&rx).map(|(m, r)| div(*m, *r)).collect(),
            uy: self.my.iter().zip(&ry).map(|(m, r)| div(*m, *r)).collect(),
        }
    }
}

/// Initial density and momentum; `q0` must vanish where `rho0` does.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialData {
    pub rho0: CellField,
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
}

impl InitialData {
    /// `rho0 = 1 + 0.1 (1 - |x - c|^2 / R^2)^2` with `c = (1/2, 1/2)`,
    /// `R = 0.3`, and `q0 = 0`.
    pub fn default_bump(grid: Grid) -> Self {
        let rho0 = CellField::from_fn(grid, |p| {
            let s = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)) / 0.09;
            1.0 + if s < 1.0 { 0.1 * (1.0 - s).powi(2) } else { 0.0 }
        });
        Self::at_rest(rho0)
    }

    pub fn at_rest(rho0: CellField) -> Self {
        let g = rho0.grid;
        Self { rho0, qx: vec![0.0; g.len(crate::FieldKind::XFace)], qy: vec![0.0; g.len(crate::FieldKind::YFace)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho0.values.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidConfig("initial density must be nonnegative".into()));
        }
        let s = FluidState { grid: self.rho0.grid, rho: self.rho0.values.clone(), mx: self.qx.clone(), my: self.qy.clone(), t: 0.0 };
        let (rx, ry) = s.face_densities(Boundary::default());
        let bad = self.qx.iter().zip(&rx).chain(self.qy.iter().zip(&ry)).any(|(q, r)| *r == 0.0 && *q != 0.0);
        if bad {
            return Err(Error::InvalidConfig("initial momentum must vanish where the density does".into()));
        }
        Ok(())
    }

    /// State on the perforated grid: density extended by zero into solid
    /// cells, momentum zeroed on solid and wall faces.
    pub fn into_state(&self, solver: &Solver) -> Result<FluidState> {
        self.validate()?;
        let mut s = FluidState {
            grid: self.rho0.grid,
            rho: self.rho0.values.clone(),
            mx: self.qx.clone(),
            my: self.qy.clone(),
            t: 0.0,
        };
        for (r, c) in s.rho.iter_mut().zip(&solver.mask.cells) {
            if c.is_solid() {
                *r = 0.0;
            }
        }
        solver.enforce_walls(&mut s);
        Ok(s)
    }
}

/// Per-step energy bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// `dt * int S(grad u) : grad u` at the old velocity.
    pub dissipation: f64,
    /// `dt * int rho f . u` at the old state.
    pub work: f64,
}

/// Scheme for one geometry and parameter set.
#[derive(Clone, Debug)]
pub struct Solver {
    pub params: FluidParams,
    pub bc: Boundary,
    mask: GridMask,
    fixed_x: Vec<bool>,
    fixed_y: Vec<bool>,
    /// `(is_x, face, lambda)` friction rates of subgrid holes.
    brinkman: Vec<(bool, usize, f64)>,
}

impl Solver {
    pub fn new(params: FluidParams, mask: GridMask, bc: Boundary) -> Result<Self> {
        params.validate()?;
        let g = mask.grid;
        let solid = |i: usize, j: usize| mask.cells[g.cell(i, j)].is_solid();
        let mut fixed_x = vec![false; g.len(crate::FieldKind::XFace)];
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let wall = !bc.periodic_x && (i == 0 || i == g.nx);
                let l = if i == 0 { g.nx - 1 } else { i - 1 };
                let r = if i == g.nx { 0 } else { i };
                fixed_x[g.xface(i, j)] = wall || solid(l, j) || solid(r, j);
            }
        }
        let mut fixed_y = vec![false; g.len(crate::FieldKind::YFace)];
        for j in 0..=g.ny {
            for i in 0..g.nx {
                let wall = !bc.periodic_y && (j == 0 || j == g.ny);
                let b = if j == 0 { g.ny - 1 } else { j - 1 };
                let t = if j == g.ny { 0 } else { j };
                fixed_y[g.yface(i, j)] = wall || solid(i, b) || solid(i, t);
            }
        }
        Ok(Self { params, bc, mask, fixed_x, fixed_y, brinkman: Vec::new() })
    }

    /// Adds capacity-calibrated friction `lambda = mu cap / (h^2 rho)`,
    /// `cap = 2 pi / |log(a / h)|`, on the faces of every subgrid-hole cell.
    pub fn with_subgrid_friction(mut self, holes: &HoleSet) -> Self {
        let g = self.mask.grid;
        let cap = 2.0 * std::f64::consts::PI / (holes.a / g.h).ln().abs().max(1e-12);
        let rate = self.params.mu * cap / (g.h * g.h);
        let cells: Vec<usize> = self.mask.subgrid_cells().map(|(c, _)| c).collect();
        for c in cells {
            let (i, j) = (c % g.nx, c / g.nx);
            for f in [g.xface(i, j), g.xface(i + 1, j)] {
                if !self.fixed_x[f] {
                    self.brinkman.push((true, f, rate));
                }
            }
            for f in [g.yface(i, j), g.yface(i, j + 1)] {
                if !self.fixed_y[f] {
                    self.brinkman.push((false, f, rate));
                }
            }
        }
        self
    }

    pub fn mask(&self) -> &GridMask {
        &self.mask
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid
    }

    fn enforce_walls(&self, s: &mut FluidState) {
        for (m, f) in s.mx.iter_mut().zip(&self.fixed_x) {
            if *f {
                *m = 0.0;
            }
        }
        for (m, f) in s.my.iter_mut().zip(&self.fixed_y) {
            if *f {
                *m = 0.0;
            }
        }
        self.sync_periodic(&mut s.mx, &mut s.my);
    }

    fn sync_periodic(&self, mx: &mut [f64], my: &mut [f64]) {
        let g = self.grid();
        if self.bc.periodic_x {
            for j in 0..g.ny {
                mx[g.xface(g.nx, j)] = mx[g.xface(0, j)];
            }
        }
        if self.bc.periodic_y {
            for i in 0..g.nx {
                my[g.yface(i, g.ny)] = my[g.yface(i, 0)];
            }
        }
    }

    /// Largest admissible time step: acoustic `cfl h / (|u| + c)` and
    /// parabolic `rho_min h^2 / (4 (2 mu + eta))`.
    pub fn stable_dt(&self, s: &FluidState, cfl: f64) -> f64 {
        let (a, p) = self.limits(s);
        (cfl * a).min(p)
    }

    fn limits(&self, s: &FluidState) -> (f64, f64) {
        let g = self.grid();
        let u = s.velocity(self.bc);
        let umax = u.max_abs();
        let gamma = self.params.gamma;
        let mut cmax = 0.0_f64;
        let mut rmin = f64::INFINITY;
        for (r, c) in s.rho.iter().zip(&self.mask.cells) {
            if !c.is_solid() {
                cmax = cmax.max((gamma * r.max(0.0).powf(gamma - 1.0)).sqrt());
                rmin = rmin.min(*r);
            }
        }
        let acoustic = g.h / (umax + cmax).max(1e-300);
        let parabolic = rmin.clamp(1e-12, 1.0) * g.h * g.h / (4.0 * (2.0 * self.params.mu + self.params.eta));
        (acoustic, parabolic)
    }

    /// Checks `dt` against the limits at the given CFL number.
    pub fn check_dt(&self, s: &FluidState, dt: f64, cfl: f64) -> Result<()> {
        let (a, p) = self.limits(s);
        let limit = (cfl * a).min(p);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        Ok(())
    }

    /// Advances `s` by `dt` in place.
    pub fn step(&self, s: &mut FluidState, dt: f64) -> Result<StepInfo> {
        let g = self.grid();
        let (nx, ny, h) = (g.nx, g.ny, g.h);
        let (px, py) = (self.bc.periodic_x, self.bc.periodic_y);
        let u = s.velocity(self.bc);

        // upwind mass fluxes
        let cl = |i: usize| if i == 0 { nx - 1 } else { i - 1 };
        let cr = |i: usize| if i == nx { 0 } else { i };
        let cb = |j: usize| if j == 0 { ny - 1 } else { j - 1 };
        let ct = |j: usize| if j == ny { 0 } else { j };
        let mut fx = vec![0.0; u.ux.len()];
        for j in 0..ny {
            for i in 0..=nx {
                let f = g.xface(i, j);
                if self.fixed_x[f] {
                    continue;
                }
                let v = u.ux[f];
                let up = if v > 0.0 { s.rho[g.cell(cl(i), j)] } else { s.rho[g.cell(cr(i), j)] };
                fx[f] = v * up;
            }
        }
        let mut fy = vec![0.0; u.uy.len()];
        for j in 0..=ny {
            for i in 0..nx {
                let f = g.yface(i, j);
                if self.fixed_y[f] {
                    continue;
                }
                let v = u.uy[f];
                let up = if v > 0.0 { s.rho[g.cell(i, cb(j))] } else { s.rho[g.cell(i, ct(j))] };
                fy[f] = v * up;
            }
        }

        // energy terms at the old state
        let info = self.step_energy(s, &u, dt);

        // continuity
        let mut rho_new = s.rho.clone();
        for j in 0..ny {
            for i in 0..nx {
                let c = g.cell(i, j);
                let div = fx[g.xface(i + 1, j)] - fx[g.xface(i, j)] + fy[g.yface(i, j + 1)] - fy[g.yface(i, j)];
                rho_new[c] -= dt / h * div;
            }
        }
        for (c, r) in rho_new.iter().enumerate() {
            if *r < 0.0 {
                return Err(Error::NegativeDensity { cell: c, value: *r });
            }
        }
        let gamma = self.params.gamma;
        let p_new: Vec<f64> = rho_new.iter().map(|r| pressure(*r, gamma)).collect();

        // viscous stresses at the old velocity
        let (sxx, syy, sxy) = self.stresses(&u);

        // momentum, x-faces
        let ux = |i: i64, j: i64| -> f64 {
            let ii = if px { i.rem_euclid(nx as i64) } else { i };
            let jj = if py { j.rem_euclid(ny as i64) } else { j };
            if ii < 0 || jj < 0 || ii > nx as i64 || jj >= ny as i64 {
                0.0
            } else {
                u.ux[g.xface(ii as usize, jj as usize)]
            }
        };
        let uy = |i: i64, j: i64| -> f64 {
            let ii = if px { i.rem_euclid(nx as i64) } else { i };
            let jj = if py { j.rem_euclid(ny as i64) } else { j };
            if ii < 0 || jj < 0 || ii >= nx as i64 || jj > ny as i64 {
                0.0
            } else {
                u.uy[g.yface(ii as usize, jj as usize)]
            }
        };
        let fxa = |i: i64, j: i64| -> f64 {
            let ii = if px { i.rem_euclid(nx as i64) } else { i };
            let jj = if py { j.rem_euclid(ny as i64) } else { j };
            if ii < 0 || jj < 0 || ii > nx as i64 || jj >= ny as i64 {
                0.0
            } else {
                fx[g.xface(ii as usize, jj as usize)]
            }
        };
        let fya = |i: i64, j: i64| -> f64 {
            let ii = if px { i.rem_euclid(nx as i64) } else { i };
            let jj = if py { j.rem_euclid(ny as i64) } else { j };
            if ii < 0 || jj < 0 || ii >= nx as i64 || jj > ny as i64 {
                0.0
            } else {
                fy[g.yface(ii as usize, jj as usize)]
            }
        };
        let upw = |flux: f64, minus: f64, plus: f64| if flux > 0.0 { flux * minus } else { flux * plus };
        let sxy_at = |i: usize, j: usize| sxy[j * (nx + 1) + i];

        let mut mx_new = s.mx.clone();
        mx_new.par_chunks_mut(nx + 1).enumerate().for_each(|(j, row)| {
            for (i, m) in row.iter_mut().enumerate() {
                let f = g.xface(i, j);
                if self.fixed_x[f] || (px && i == nx) {
                    continue;
                }
                let (ii, jj) = (i as i64, j as i64);
                let fe = 0.5 * (fxa(ii, jj) + fxa(ii + 1, jj));
                let fw = 0.5 * (fxa(ii - 1, jj) + fxa(ii, jj));
                let fnn = 0.5 * (fya(ii - 1, jj + 1) + fya(ii, jj + 1));
                let fs = 0.5 * (fya(ii - 1, jj) + fya(ii, jj));
                let conv = (upw(fe, ux(ii, jj), ux(ii + 1, jj)) - upw(fw, ux(ii - 1, jj), ux(ii, jj))
                    + upw(fnn, ux(ii, jj), ux(ii, jj + 1))
                    - upw(fs, ux(ii, jj - 1), ux(ii, jj)))
                    / h;
                let (l, r) = (cl(i), cr(i));
                let grad_p = (p_new[g.cell(r, j)] - p_new[g.cell(l, j)]) / h;
                let visc = (sxx[g.cell(r, j)] - sxx[g.cell(l, j)]) / h + (sxy_at(i, j + 1) - sxy_at(i, j)) / h;
                let rho_face = 0.5 * (rho_new[g.cell(l, j)] + rho_new[g.cell(r, j)]);
                let force = rho_face * self.params.force_x(f);
                *m += dt * (-conv - grad_p + visc + force);
            }
        });
        let mut my_new = s.my.clone();
        my_new.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            for (i, m) in row.iter_mut().enumerate() {
                let f = g.yface(i, j);
                if self.fixed_y[f] || (py && j == ny) {
                    continue;
                }
                let (ii, jj) = (i as i64, j as i64);
                let fnn = 0.5 * (fya(ii, jj) + fya(ii, jj + 1));
                let fs = 0.5 * (fya(ii, jj - 1) + fya(ii, jj));
                let fe = 0.5 * (fxa(ii + 1, jj - 1) + fxa(ii + 1, jj));
                let fw = 0.5 * (fxa(ii, jj - 1) + fxa(ii, jj));
                let conv = (upw(fnn, uy(ii, jj), uy(ii, jj + 1)) - upw(fs, uy(ii, jj - 1), uy(ii, jj))
                    + upw(fe, uy(ii, jj), uy(ii + 1, jj))
                    - upw(fw, uy(ii - 1, jj), uy(ii, jj)))
                    / h;
                let (b, t) = (cb(j), ct(j));
                let grad_p = (p_new[g.cell(i, t)] - p_new[g.cell(i, b)]) / h;
                let visc = (syy[g.cell(i, t)] - syy[g.cell(i, b)]) / h + (sxy_at(i + 1, j) - sxy_at(i, j)) / h;
                let rho_face = 0.5 * (rho_new[g.cell(i, b)] + rho_new[g.cell(i, t)]);
                let force = rho_face * self.params.force_y(f);
                *m += dt * (-conv - grad_p + visc + force);
            }
        });

        for &(is_x, f, rate) in &self.brinkman {
            let m = if is_x { &mut mx_new[f] } else { &mut my_new[f] };
            let rho_face = {
                if is_x {
                    let (i, j) = (f % (nx + 1), f / (nx + 1));
                    0.5 * (rho_new[g.cell(cl(i), j)] + rho_new[g.cell(cr(i), j)])
                } else {
                    let (i, j) = (f % nx, f / nx);
                    0.5 * (rho_new[g.cell(i, cb(j))] + rho_new[g.cell(i, ct(j))])
                }
            };
            *m /= 1.0 + dt * rate / rho_face.max(1e-12);
        }

        s.rho = rho_new;
        s.mx = mx_new;
        s.my = my_new;
        self.sync_periodic(&mut s.mx, &mut s.my);
        s.t += dt;
        Ok(info)
    }

    /// Cell stresses `S_xx`, `S_yy` and node stress `S_xy` (nodes indexed
    /// `j (nx + 1) + i`).
    fn stresses(&self, u: &FaceField) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = self.grid();
        let (nx, ny, h) = (g.nx, g.ny, g.h);
        let (mu, eta) = (self.params.mu, self.params.eta);
        let mut sxx = vec![0.0; g.cell_count()];
        let mut syy = vec![0.0; g.cell_count()];
        for j in 0..ny {
            for i in 0..nx {
                let dux = (u.ux[g.xface(i + 1, j)] - u.ux[g.xface(i, j)]) / h;
                let dvy = (u.uy[g.yface(i, j + 1)] - u.uy[g.yface(i, j)]) / h;
                let c = g.cell(i, j);
                sxx[c] = mu * (dux - dvy) + eta * (dux + dvy);
                syy[c] = mu * (dvy - dux) + eta * (dux + dvy);
            }
        }
        let mut sxy = vec![0.0; (nx + 1) * (ny + 1)];
        for j in 0..=ny {
            for i in 0..=nx {
                let (duy, dvx) = self.node_shear(u, i, j);
                sxy[j * (nx + 1) + i] = mu * (duy + dvx);
            }
        }
        (sxx, syy, sxy)
    }

    /// `(d_y u_x, d_x u_y)` at node `(i, j)` with half-cell ghost reflection at
    /// walls.
    fn node_shear(&self, u: &FaceField, i: usize, j: usize) -> (f64, f64) {
        let g = self.grid();
        let (nx, ny, h) = (g.nx, g.ny, g.h);
        let duy = if i == nx && self.bc.periodic_x {
            self.node_shear(u, 0, j).0
        } else if self.bc.periodic_y {
            let jb = if j == 0 { ny - 1 } else { j - 1 };
            let jt = if j == ny { 0 } else { j };
            (u.ux[g.xface(i, jt)] - u.ux[g.xface(i, jb)]) / h
        } else if j == 0 {
            2.0 * u.ux[g.xface(i, 0)] / h
        } else if j == ny {
            -2.0 * u.ux[g.xface(i, ny - 1)] / h
        } else {
            (u.ux[g.xface(i, j)] - u.ux[g.xface(i, j - 1)]) / h
        };
        let dvx = if j == ny && self.bc.periodic_y {
            self.node_shear(u, i, 0).1
        } else if self.bc.periodic_x {
            let il = if i == 0 { nx - 1 } else { i - 1 };
            let ir = if i == nx { 0 } else { i };
            (u.uy[g.yface(ir, j)] - u.uy[g.yface(il, j)]) / h
        } else if i == 0 {
            2.0 * u.uy[g.yface(0, j)] / h
        } else if i == nx {
            -2.0 * u.uy[g.yface(nx - 1, j)] / h
        } else {
            (u.uy[g.yface(i, j)] - u.uy[g.yface(i - 1, j)]) / h
        };
        (duy, dvx)
    }

    /// `int S(grad u) : grad u` of a face velocity.
    pub fn dissipation_rate(&self, u: &FaceField) -> f64 {
        let g = self.grid();
        let (nx, ny, h) = (g.nx, g.ny, g.h);
        let (mu, eta) = (self.params.mu, self.params.eta);
        let mut acc = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let dux = (u.ux[g.xface(i + 1, j)] - u.ux[g.xface(i, j)]) / h;
                let dvy = (u.uy[g.yface(i, j + 1)] - u.uy[g.yface(i, j)]) / h;
                acc += (mu * (dux - dvy).powi(2) + eta * (dux + dvy).powi(2)) * h * h;
            }
        }
        for j in 0..=ny {
            for i in 0..=nx {
                if (self.bc.periodic_x && i == nx) || (self.bc.periodic_y && j == ny) {
                    continue;
                }
                let wx = if !self.bc.periodic_x && (i == 0 || i == nx) { 0.5 } else { 1.0 };
                let wy = if !self.bc.periodic_y && (j == 0 || j == ny) { 0.5 } else { 1.0 };
                let (duy, dvx) = self.node_shear(u, i, j);
                acc += mu * (duy + dvx).powi(2) * wx * wy * h * h;
            }
        }
        acc
    }

    fn step_energy(&self, s: &FluidState, u: &FaceField, dt: f64) -> StepInfo {
        let g = self.grid();
        let a = g.cell_area();
        let mut work = 0.0;
        for (f, m) in s.mx.iter().enumerate() {
            if !(self.bc.periodic_x && f % (g.nx + 1) == g.nx) {
                work += m * self.params.force_x(f) * a;
            }
        }
        for (f, m) in s.my.iter().enumerate() {
            if !(self.bc.periodic_y && f / g.nx == g.ny) {
                work += m * self.params.force_y(f) * a;
            }
        }
        StepInfo { dissipation: dt * self.dissipation_rate(u), work: dt * work }
    }

    /// Kinetic `sum |m|^2 / (2 rho_sigma)` and internal `sum rho^gamma / (gamma - 1)`
    /// energies.
    pub fn energies(&self, s: &FluidState) -> (f64, f64) {
        let g = self.grid();
        let a = g.cell_area();
        let (rx, ry) = s.face_densities(self.bc);
        let mut kin = 0.0;
        for (f, (m, r)) in s.mx.iter().zip(&rx).enumerate() {
            if *r > 0.0 && !(self.bc.periodic_x && f % (g.nx + 1) == g.nx) {
                kin += 0.5 * m * m / r * a;
            }
        }
        for (f, (m, r)) in s.my.iter().zip(&ry).enumerate() {
            if *r > 0.0 && !(self.bc.periodic_y && f / g.nx == g.ny) {
                kin += 0.5 * m * m / r * a;
            }
        }
        let gamma = self.params.gamma;
        let int: f64 = s.rho.iter().map(|r| pressure(*r, gamma) / (gamma - 1.0)).sum::<f64>() * a;
        (kin, int)
    }

    /// Total momentum `sum m h^2` per component (periodic duplicates skipped).
    pub fn total_momentum(&self, s: &FluidState) -> [f64; 2] {
        let g = self.grid();
        let a = g.cell_area();
        let mut px = 0.0;
        for (f, m) in s.mx.iter().enumerate() {
            if !(self.bc.periodic_x && f % (g.nx + 1) == g.nx) {
                px += m * a;
            }
        }
        let mut py = 0.0;
        for (f, m) in s.my.iter().enumerate() {
            if !(self.bc.periodic_y && f / g.nx == g.ny) {
                py += m * a;
            }
        }
        [px, py]
    }
}

/// One-step convenience wrapper around [`Solver::step`] that also checks
/// the time step restriction at CFL number 1.
pub fn step(state: &FluidState, params: &FluidParams, mask: &GridMask, dt: f64) -> Result<FluidState> {
    let solver = Solver::new(params.clone(), mask.clone(), Boundary::default())?;
    solver.check_dt(state, dt, 1.0)?;
    let mut s = state.clone();
    solver.step(&mut s, dt)?;
    Ok(s)
}

/// Stored state for the weak-form diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub rho: Vec<f64>,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub internal: f64,
    /// Accumulated dissipation.
    pub dissipation: f64,
    /// Accumulated work of the body force.
    pub work: f64,
    /// `E(t) + D(t) - E(0) - W(t)`; positive values violate the inequality.
    pub ei_defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub const HEADER: &'static str = "t,mass,kinetic,internal,dissipation,work,ei_defect";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for e in &self.entries {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                e.t, e.mass, e.kinetic, e.internal, e.dissipation, e.work, e.ei_defect
            ));
        }
        s
    }

    pub fn initial_energy(&self) -> f64 {
        self.entries.first().map(|e| e.kinetic + e.internal).unwrap_or(0.0)
    }

    pub fn max_defect(&self) -> f64 {
        self.entries.iter().map(|e| e.ei_defect).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest `c >= 0` with `defect <= c (h + dt) E(0)` at every time.
    pub fn defect_constant(&self, h: f64, dt: f64) -> f64 {
        let e0 = self.initial_energy();
        if e0 <= 0.0 {
            return 0.0;
        }
        self.max_defect().max(0.0) / ((h + dt) * e0)
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.entries.first().map(|e| e.mass).unwrap_or(0.0);
        self.entries.iter().map(|e| ((e.mass - m0) / m0).abs()).fold(0.0, f64::max)
    }
}

/// Per-step energy increments recorded during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    pub internal: f64,
    pub dissipation: f64,
    pub work: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub bc: Boundary,
    pub gamma: f64,
    pub params: FluidParams,
    pub dt: f64,
    /// Cell states of the mask the run used.
    pub cells: Vec<CellState>,
    pub snapshots: Vec<Snapshot>,
    /// State at `t = 0` followed by one record per step; `dissipation` and
    /// `work` are the increments of the step ending at `t`.
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn sample_times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has snapshots")
    }

    pub fn t_end(&self) -> f64 {
        self.last().t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Steps between snapshots; the initial and final states are always kept.
    pub snapshot_every: usize,
    /// CFL number checked before every step.
    pub cfl: f64,
}

fn snapshot(solver: &Solver, s: &FluidState) -> Snapshot {
    let u = s.velocity(solver.bc);
    Snapshot { t: s.t, rho: s.rho.clone(), ux: u.ux, uy: u.uy, mx: s.mx.clone(), my: s.my.clone() }
}

fn record(solver: &Solver, s: &FluidState, info: StepInfo) -> StepRecord {
    let (kinetic, internal) = solver.energies(s);
    StepRecord { t: s.t, mass: s.mass(), kinetic, internal, dissipation: info.dissipation, work: info.work }
}

/// Integrates to `t_end` with a fixed step (the last step is shortened to
/// land on `t_end`).
pub fn run(solver: &Solver, initial: FluidState, opts: &RunOptions) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(opts.t_end >= 0.0) || opts.snapshot_every == 0 {
        return Err(Error::InvalidConfig("run needs dt > 0, t_end >= 0 and snapshot_every >= 1".into()));
    }
    let mut s = initial;
    let mut snapshots = vec![snapshot(solver, &s)];
    let mut records = vec![record(solver, &s, StepInfo::default())];
    let steps = (opts.t_end / opts.dt - 1e-9).ceil().max(0.0) as usize;
    for n in 0..steps {
        let dt = if n + 1 == steps { opts.t_end - opts.dt * n as f64 } else { opts.dt };
        solver.check_dt(&s, dt, opts.cfl)?;
        let info = solver.step(&mut s, dt)?;
        if n + 1 == steps {
            s.t = opts.t_end;
        }
        records.push(record(solver, &s, info));
        if (n + 1) % opts.snapshot_every == 0 || n + 1 == steps {
            snapshots.push(snapshot(solver, &s));
        }
    }
    Ok(Trajectory {
        grid: solver.grid(),
        bc: solver.bc,
        gamma: solver.params.gamma,
        params: solver.params.clone(),
        dt: opts.dt,
        cells: solver.mask.cells.clone(),
        snapshots,
        records,
    })
}

/// Energy-inequality ledger of a run.
pub fn energy_audit(traj: &Trajectory) -> EnergyLedger {
    let mut entries = Vec::with_capacity(traj.records.len());
    let mut diss = 0.0;
    let mut work = 0.0;
    let e0 = traj.records.first().map(|r| r.kinetic + r.internal).unwrap_or(0.0);
    for r in &traj.records {
        diss += r.dissipation;
        work += r.work;
        entries.push(LedgerEntry {
            t: r.t,
            mass: r.mass,
            kinetic: r.kinetic,
            internal: r.internal,
            dissipation: diss,
            work,
            ei_defect: r.kinetic + r.internal + diss - e0 - work,
        });
    }
    EnergyLedger { entries }
}

/// Renormalizing function `b` with derivative.
pub trait Renormalization: Sync {
    fn b(&self, s: f64) -> f64;
    fn db(&self, s: f64) -> f64;
}

pub struct Identity;

impl Renormalization for Identity {
    fn b(&self, s: f64) -> f64 {
        s
    }
    fn db(&self, _s: f64) -> f64 {
        1.0
    }
}

pub struct Square;

impl Renormalization for Square {
    fn b(&self, s: f64) -> f64 {
        s * s
    }
    fn db(&self, s: f64) -> f64 {
        2.0 * s
    }
}

/// Cell-centered velocity (face averages) and divergence of a snapshot.
pub(crate) fn cell_velocity(g: Grid, snap: &Snapshot) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = g.cell_count();
    let (mut u, mut v, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.cell(i, j);
            let (l, r) = (snap.ux[g.xface(i, j)], snap.ux[g.xface(i + 1, j)]);
            let (b, t) = (snap.uy[g.yface(i, j)], snap.uy[g.yface(i, j + 1)]);
            u[c] = 0.5 * (l + r);
            v[c] = 0.5 * (b + t);
            d[c] = (r - l + t - b) / g.h;
        }
    }
    (u, v, d)
}

/// Trapezoid weights of a time sampling.
pub(crate) fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let dt = times[k + 1] - times[k];
        w[k] += 0.5 * dt;
        w[k + 1] += 0.5 * dt;
    }
    w
}

/// Largest weak residual of the renormalized continuity equation over the
/// dictionary:
/// `int int b psi_t + b u . grad psi - (rho b' - b) div u psi + int b(rho0) psi(0)`.
pub fn renormalized_residual(traj: &Trajectory, b: &dyn Renormalization, dict: &TestDictionary) -> f64 {
    let g = traj.grid;
    let a = g.cell_area();
    let times = traj.sample_times();
    let w = trapezoid_weights(&times);
    let fields: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = traj.snapshots.iter().map(|s| cell_velocity(g, s)).collect();
    (0..dict.len())
        .into_par_iter()
        .map(|k| {
            let mut total = 0.0;
            for (n, snap) in traj.snapshots.iter().enumerate() {
                let t = snap.t;
                let (u, v, d) = &fields[n];
                let mut acc = 0.0;
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let c = g.cell(i, j);
                        let x = g.cell_center(i, j);
                        let r = snap.rho[c];
                        let (bv, dbv) = (b.b(r), b.db(r));
                        let (psi, dpsi, psit) = dict.eval(k, x, t);
                        acc += bv * psit + bv * (u[c] * dpsi[0] + v[c] * dpsi[1]) - (r * dbv - bv) * d[c] * psi;
                    }
                }
                total += w[n] * acc * a;
            }
            let first = &traj.snapshots[0];
            let mut init = 0.0;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let c = g.cell(i, j);
                    init += b.b(first.rho[c]) * dict.eval(k, g.cell_center(i, j), first.t).0;
                }
            }
            (total + init * a).abs()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// `int_0^T int rho^(gamma + theta)` by the trapezoid rule over snapshots.
pub fn pressure_integrability(traj: &Trajectory, theta: f64) -> Result<f64> {
    let gamma = traj.gamma;
    if !(theta > 0.0 && theta < gamma - 1.0) {
        return Err(Error::ThetaOutOfRange { theta, gamma });
    }
    let a = traj.grid.cell_area();
    let w = trapezoid_weights(&traj.sample_times());
    Ok(traj
        .snapshots
        .iter()
        .zip(&w)
        .map(|(s, wk)| wk * s.rho.iter().map(|r| r.max(0.0).powf(gamma + theta)).sum::<f64>() * a)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::rasterize;

    fn all_fluid(n: usize) -> GridMask {
        GridMask::all_fluid(Grid::unit_square(n))
    }

    #[test]
    fn pressure_examples() {
        assert_eq!(pressure(2.0, 2.0), 4.0);
        assert_eq!(pressure(0.0, 2.5), 0.0);
        assert!((pressure(1.5, 2.5) - 2.7557).abs() < 1e-4);
    }

    #[test]
    fn stress_examples() {
        assert_eq!(stress([[1.0, 0.0], [0.0, 1.0]], 1.0, 0.5), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(stress([[0.0, 1.0], [-1.0, 0.0]], 3.0, 2.0), [[0.0; 2]; 2]);
        assert_eq!(stress([[1.0, 2.0], [3.0, 4.0]], 2.0, 1.0), [[-1.0, 10.0], [10.0, 11.0]]);
    }

    #[test]
    fn study_requires_gamma_above_two() {
        let p = FluidParams { gamma: 2.0, ..FluidParams::default() };
        assert!(p.validate().is_ok());
        let e = p.validate_for_study().unwrap_err();
        assert!(e.to_string().contains("gamma > 2"));
    }

    #[test]
    fn constant_state_is_steady() {
        let mask = all_fluid(16);
        let params = FluidParams { force: BodyForce::Constant([0.0, 0.0]), ..FluidParams::default() };
        let solver = Solver::new(params, mask, Boundary::default()).unwrap();
        let mut s = FluidState::at_rest(CellField::from_fn(Grid::unit_square(16), |_| 1.0));
        for _ in 0..10 {
            solver.step(&mut s, 1e-3).unwrap();
        }
        assert!(s.rho.iter().all(|r| (r - 1.0).abs() < 1e-15));
        assert!(s.mx.iter().chain(&s.my).all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn mass_is_conserved_with_holes() {
        let holes = HoleSet::explicit(0.6, 0.1, 2.0, vec![[0.5, 0.5]]);
        let mask = rasterize(&holes, 32);
        let solver = Solver::new(FluidParams::default(), mask, Boundary::default()).unwrap();
        let mut s = InitialData::default_bump(Grid::unit_square(32)).into_state(&solver).unwrap();
        let m0 = s.mass();
        let dt = solver.stable_dt(&s, 0.4);
        for _ in 0..50 {
            solver.step(&mut s, dt).unwrap();
        }
        assert!(((s.mass() - m0) / m0).abs() < 1e-13);
        let g = s.grid;
        for j in 0..g.ny {
            for i in 0..=g.nx {
                if solver.fixed_x[g.xface(i, j)] {
                    assert_eq!(s.mx[g.xface(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let mask = all_fluid(16);
        let solver = Solver::new(FluidParams::default(), mask.clone(), Boundary::default()).unwrap();
        let s = FluidState::at_rest(CellField::from_fn(mask.grid, |_| 1.0));
        let dt = 10.0 * solver.stable_dt(&s, 1.0);
        assert!(matches!(step(&s, &FluidParams::default(), &mask, dt), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn periodic_drift_matches_force() {
        let n = 16;
        let mask = all_fluid(n);
        let params = FluidParams { force: BodyForce::Constant([0.3, 0.0]), ..FluidParams::default() };
        let bc = Boundary { periodic_x: true, periodic_y: true };
        let solver = Solver::new(params, mask, bc).unwrap();
        let mut s = InitialData::default_bump(Grid::unit_square(n)).into_state(&solver).unwrap();
        let mass = s.mass();
        let dt = solver.stable_dt(&s, 0.4);
        let steps = 40;
        for _ in 0..steps {
            solver.step(&mut s, dt).unwrap();
        }
        let p = solver.total_momentum(&s);
        let expect = 0.3 * mass * dt * steps as f64;
        assert!((p[0] - expect).abs() < 1e-6, "{} {}", p[0], expect);
        assert!(p[1].abs() < 1e-6);
    }

    #[test]
    fn zero_velocity_constant_density_has_no_defect() {
        let mask = all_fluid(8);
        let params = FluidParams { force: BodyForce::Constant([0.0, 0.0]), ..FluidParams::default() };
        let solver = Solver::new(params, mask, Boundary::default()).unwrap();
        let s = FluidState::at_rest(CellField::from_fn(Grid::unit_square(8), |_| 1.0));
        let traj = run(&solver, s, &RunOptions { t_end: 0.05, dt: 0.01, snapshot_every: 1, cfl: 1.0 }).unwrap();
        let ledger = energy_audit(&traj);
        assert!(ledger.entries.iter().all(|e| e.ei_defect.abs() < 1e-15 && e.work == 0.0));
        assert_eq!(traj.snapshots.len(), 6);
    }

    #[test]
    fn theta_range_enforced() {
        let mask = all_fluid(4);
        let solver = Solver::new(FluidParams::default(), mask, Boundary::default()).unwrap();
        let s = FluidState::at_rest(CellField::from_fn(Grid::unit_square(4), |_| 1.0));
        let params = FluidParams { force: BodyForce::Constant([0.0, 0.0]), ..FluidParams::default() };
        let solver = Solver { params, ..solver };
        let traj = run(&solver, s, &RunOptions { t_end: 1.0, dt: 0.01, snapshot_every: 10, cfl: 1.0 }).unwrap();
        assert!((pressure_integrability(&traj, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(pressure_integrability(&traj, 1.5), Err(Error::ThetaOutOfRange { .. })));
    }

    proptest::proptest! {
        #[test]
        fn stress_is_symmetric_and_traces_correctly(
            g in proptest::array::uniform4(-10.0f64..10.0), mu in 0.0f64..5.0, eta in 0.0f64..5.0,
        ) {
            let grad = [[g[0], g[1]], [g[2], g[3]]];
            let s = stress(grad, mu, eta);
            proptest::prop_assert!((s[0][1] - s[1][0]).abs() <= 1e-12 * (1.0 + s[0][1].abs()));
            let div = g[0] + g[3];
            let trace = s[0][0] + s[1][1];
            proptest::prop_assert!((trace - 2.0 * eta * div).abs() <= 1e-10 * (1.0 + trace.abs()));
        }
    }
}
