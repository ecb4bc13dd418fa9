//! The epsilon sweep: perforated runs against a hole-free reference run,
//! compared in a weak topology through a fixed dictionary of test functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::{CorrectorField, Mat2, Tensor3};
use crate::domain::{generate_centers, rasterize, GridMask, HoleSet, HoleShape, PerforationConfig, Placement, RadiusEntry, Schedule};
use crate::error::{Error, Result};
use crate::mac::{CellField, FieldKind, Grid};
use crate::ns2d::{
    cell_velocity, energy_audit, pressure, pressure_integrability, run, trapezoid_weights, BodyForce, Boundary,
    FluidParams, InitialData, RunOptions, Snapshot, Solver, Trajectory,
};

/// Tensor products `beta(x) beta(y) tau(t)` of polynomial bumps
/// `beta(s) = (1 - ((s - c) / w)^2)^2` on a uniform set of centers, with the
/// two time profiles `(1 - t/T)^2` and `(t/T)(1 - t/T)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDictionary {
    pub centers: Vec<f64>,
    pub half_width: f64,
    pub t_end: f64,
}

impl TestDictionary {
    /// Three centers per axis: `{1/4, 1/2, 3/4}` with half-width `0.2`.
    pub fn new(t_end: f64) -> Self {
        Self::with_centers(3, t_end)
    }

    pub fn with_centers(n: usize, t_end: f64) -> Self {
        let n = n.max(1);
        let centers = (1..=n).map(|k| k as f64 / (n + 1) as f64).collect();
        Self { centers, half_width: 0.8 / (n + 1) as f64, t_end }
    }

    pub fn len(&self) -> usize {
        self.centers.len() * self.centers.len() * 2
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn spatial_count(&self) -> usize {
        self.centers.len() * self.centers.len()
    }

    /// Splits `k` into (spatial index, time profile).
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / 2, k % 2)
    }

    fn bump(&self, c: f64, s: f64) -> (f64, f64) {
        let z = (s - c) / self.half_width;
        if z.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let b = 1.0 - z * z;
        (b * b, -4.0 * z * b / self.half_width)
    }

    /// Spatial factor and its gradient.
    pub fn spatial(&self, s: usize, x: [f64; 2]) -> (f64, [f64; 2]) {
        let n = self.centers.len();
        let (bx, dbx) = self.bump(self.centers[s % n], x[0]);
        let (by, dby) = self.bump(self.centers[s / n], x[1]);
        (bx * by, [dbx * by, bx * dby])
    }

    /// Bounding box `[x0, x1] x [y0, y1]` of a spatial factor's support.
    pub fn support(&self, s: usize) -> [f64; 4] {
        let n = self.centers.len();
        let (cx, cy) = (self.centers[s % n], self.centers[s / n]);
        let w = self.half_width;
        [cx - w, cx + w, cy - w, cy + w]
    }

    /// Time profile and its derivative.
    pub fn temporal(&self, profile: usize, t: f64) -> (f64, f64) {
        let s = t / self.t_end;
        let r = 1.0 - s;
        if profile == 0 {
            (r * r, -2.0 * r / self.t_end)
        } else {
            (s * r * r, (r * r - 2.0 * s * r) / self.t_end)
        }
    }

    /// `(psi, grad psi, d_t psi)` of element `k`.
    pub fn eval(&self, k: usize, x: [f64; 2], t: f64) -> (f64, [f64; 2], f64) {
        let (s, p) = self.split(k);
        let (v, g) = self.spatial(s, x);
        let (tau, dtau) = self.temporal(p, t);
        (v * tau, [g[0] * tau, g[1] * tau], v * dtau)
    }

    /// Sup norm of element `k`.
    pub fn sup_norm(&self, k: usize) -> f64 {
        if self.split(k).1 == 0 {
            1.0
        } else {
            4.0 / 27.0
        }
    }
}

/// Index ranges of grid points with coordinate in `[lo, hi]` for points at
/// `(k + shift) h`.
fn index_range(lo: f64, hi: f64, h: f64, shift: f64, n: usize) -> std::ops::Range<usize> {
    let a = ((lo / h - shift).ceil().max(0.0)) as usize;
    let b = (((hi / h - shift).floor() + 1.0).max(0.0) as usize).min(n);
    a.min(b)..b
}

/// Copy of `field` with solid and subgrid-hole cells set to zero.
pub fn extend_by_zero(field: &CellField, mask: &GridMask) -> CellField {
    let values = field
        .values
        .iter()
        .zip(&mask.cells)
        .map(|(v, c)| if matches!(c, crate::domain::CellState::Fluid) { *v } else { 0.0 })
        .collect();
    CellField { grid: field.grid, values }
}

/// A time-sampled grid field.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledField {
    pub grid: Grid,
    pub kind: FieldKind,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SampledField {
    fn from_traj(traj: &Trajectory, kind: FieldKind, f: impl Fn(&Snapshot) -> Vec<f64>) -> Self {
        Self { grid: traj.grid, kind, times: traj.sample_times(), values: traj.snapshots.iter().map(f).collect() }
    }

    pub fn density(traj: &Trajectory) -> Self {
        Self::from_traj(traj, FieldKind::Cell, |s| s.rho.clone())
    }

    pub fn pressure(traj: &Trajectory) -> Self {
        let g = traj.gamma;
        Self::from_traj(traj, FieldKind::Cell, |s| s.rho.iter().map(|r| pressure(*r, g)).collect())
    }

    pub fn momentum_x(traj: &Trajectory) -> Self {
        Self::from_traj(traj, FieldKind::XFace, |s| s.mx.clone())
    }

    pub fn momentum_y(traj: &Trajectory) -> Self {
        Self::from_traj(traj, FieldKind::YFace, |s| s.my.clone())
    }

    /// `int psi_s g(t)` for every sample, over the support of the spatial
    /// factor `s`.
    fn spatial_pairings(&self, dict: &TestDictionary, s: usize, other: Option<&SampledField>) -> Vec<f64> {
        let g = self.grid;
        let [x0, x1, y0, y1] = dict.support(s);
        let (sx, sy, nx, ny) = match self.kind {
            FieldKind::Cell => (0.5, 0.5, g.nx, g.ny),
            FieldKind::XFace => (0.0, 0.5, g.nx + 1, g.ny),
            FieldKind::YFace => (0.5, 0.0, g.nx, g.ny + 1),
        };
        let ri = index_range(x0, x1, g.h, sx, nx);
        let rj = index_range(y0, y1, g.h, sy, ny);
        let mut weights = Vec::new();
        for j in rj {
            for i in ri.clone() {
                let p = [(i as f64 + sx) * g.h, (j as f64 + sy) * g.h];
                let w = dict.spatial(s, p).0;
                if w != 0.0 {
                    weights.push((j * nx + i, w));
                }
            }
        }
        (0..self.times.len())
            .map(|n| {
                let a = &self.values[n];
                let acc: f64 = match other {
                    Some(o) => weights.iter().map(|(idx, w)| (a[*idx] - o.values[n][*idx]) * w).sum(),
                    None => weights.iter().map(|(idx, w)| a[*idx] * w).sum(),
                };
                acc * g.cell_area()
            })
            .collect()
    }
}

/// `max_k |int int (g_eps - g_ref) psi_k|`, trapezoid in time and midpoint in
/// space.
pub fn weak_error(g_eps: &SampledField, g_ref: &SampledField, dict: &TestDictionary) -> Result<f64> {
    if g_eps.grid != g_ref.grid || g_eps.kind != g_ref.kind {
        return Err(Error::MismatchedSampling("grids or field kinds differ".into()));
    }
    if g_eps.times.len() != g_ref.times.len()
        || g_eps.times.iter().zip(&g_ref.times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
    {
        return Err(Error::MismatchedSampling("time samples differ".into()));
    }
    if g_eps.values.iter().chain(&g_ref.values).any(|v| v.len() != g_eps.grid.len(g_eps.kind)) {
        return Err(Error::MismatchedSampling("payload length does not match the grid".into()));
    }
    let w = trapezoid_weights(&g_eps.times);
    let per_s: Vec<f64> = (0..dict.spatial_count())
        .into_par_iter()
        .map(|s| {
            let pair = g_eps.spatial_pairings(dict, s, Some(g_ref));
            (0..2)
                .map(|p| {
                    g_eps.times.iter().zip(&w).zip(&pair).map(|((t, wn), a)| wn * dict.temporal(p, *t).0 * a).sum::<f64>().abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(per_s.into_iter().fold(0.0, f64::max))
}

/// Differences `I_j(Phi phi) - I_j(phi)`, j = 1..6, of the weak momentum
/// terms (initial data, time derivative, convection, pressure, viscous
/// stress, body force), maximized over the dictionary in both directions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub terms: [f64; 6],
    /// `max |int int S(grad u) : (grad Phi) phi|`.
    pub diffusive_commutator: f64,
    /// `max |int int rho u (x) u : (grad Phi) phi|`.
    pub convective_commutator: f64,
    /// `eps^((alpha - 2)/2) max ||phi||_inf`.
    pub bound: f64,
    pub diffusive_ratio: f64,
    pub convective_ratio: f64,
}

/// Cell-centered velocity gradient `g[j][k] = d_k u_j` with no-slip ghosts
/// at non-periodic walls.
fn cell_gradient(g: Grid, bc: Boundary, snap: &Snapshot, uc: &[f64], vc: &[f64], i: usize, j: usize) -> Mat2 {
    let h = g.h;
    let c = g.cell(i, j);
    let dux = (snap.ux[g.xface(i + 1, j)] - snap.ux[g.xface(i, j)]) / h;
    let dvy = (snap.uy[g.yface(i, j + 1)] - snap.uy[g.yface(i, j)]) / h;
    let along = |vals: &[f64], di: i64, dj: i64, periodic: bool| -> f64 {
        let (ii, jj) = (i as i64 + di, j as i64 + dj);
        let (nx, ny) = (g.nx as i64, g.ny as i64);
        if (0..nx).contains(&ii) && (0..ny).contains(&jj) {
            vals[g.cell(ii as usize, jj as usize)]
        } else if periodic {
            vals[g.cell(ii.rem_euclid(nx) as usize, jj.rem_euclid(ny) as usize)]
        } else {
            -vals[c]
        }
    };
    let duy = (along(uc, 0, 1, bc.periodic_y) - along(uc, 0, -1, bc.periodic_y)) / (2.0 * h);
    let dvx = (along(vc, 1, 0, bc.periodic_x) - along(vc, -1, 0, bc.periodic_x)) / (2.0 * h);
    [[dux, duy], [dvx, dvy]]
}

struct ActiveCell {
    cell: usize,
    x: [f64; 2],
    /// `Phi - I`.
    p: Mat2,
    grad: Tensor3,
}

pub fn momentum_defect_terms(
    traj: &Trajectory,
    corrector: &CorrectorField,
    dict: &TestDictionary,
    alpha: f64,
) -> DefectReport {
    let g = traj.grid;
    let area = g.cell_area();
    let mut active = Vec::new();
    for j in 0..g.ny {
        for i in 0..g.nx {
            let x = g.cell_center(i, j);
            if corrector.active_hole(x).is_some() {
                let mut p = corrector.eval(x);
                p[0][0] -= 1.0;
                p[1][1] -= 1.0;
                active.push(ActiveCell { cell: g.cell(i, j), x, p, grad: corrector.grad(x) });
            }
        }
    }
    let eps = corrector.holes().epsilon;
    let bound = eps.powf((alpha - 2.0) / 2.0);
    if active.is_empty() {
        return DefectReport { bound, ..DefectReport::default() };
    }

    let (mu, eta, gamma) = (traj.params.mu, traj.params.eta, traj.gamma);
    let force = |c: usize| -> [f64; 2] {
        match &traj.params.force {
            BodyForce::Constant(f) => *f,
            BodyForce::Field { fx, fy } => {
                let (i, j) = (c % g.nx, c / g.nx);
                [0.5 * (fx[g.xface(i, j)] + fx[g.xface(i + 1, j)]), 0.5 * (fy[g.yface(i, j)] + fy[g.yface(i, j + 1)])]
            }
        }
    };

    // per snapshot, per (spatial, direction): [A, B, C, D, E, comm_diff, comm_conv]
    let ns = dict.spatial_count();
    let sums: Vec<Vec<[f64; 7]>> = traj
        .snapshots
        .par_iter()
        .map(|snap| {
            let (uc, vc, _) = cell_velocity(g, snap);
            let mut out = vec![[0.0; 7]; ns * 2];
            for ac in &active {
                let c = ac.cell;
                let (i, j) = (c % g.nx, c / g.nx);
                let rho = snap.rho[c];
                let u = [uc[c], vc[c]];
                let m = [
                    0.5 * (snap.mx[g.xface(i, j)] + snap.mx[g.xface(i + 1, j)]),
                    0.5 * (snap.my[g.yface(i, j)] + snap.my[g.yface(i, j + 1)]),
                ];
                let gu = cell_gradient(g, traj.bc, snap, &uc, &vc, i, j);
                let st = crate::ns2d::stress(gu, mu, eta);
                let pr = pressure(rho, gamma);
                let f = force(c);
                for s in 0..ns {
                    let (phi, dphi) = dict.spatial(s, ac.x);
                    if phi == 0.0 && dphi == [0.0, 0.0] {
                        continue;
                    }
                    for l in 0..2 {
                        // psi_j = P_jl phi, d_k psi_j = G_jlk phi + P_jl d_k phi
                        let mut v = [0.0; 7];
                        let mut div = 0.0;
                        for jj in 0..2 {
                            let psi = ac.p[jj][l] * phi;
                            v[0] += m[jj] * psi;
                            v[4] += rho * f[jj] * psi;
                            for k in 0..2 {
                                let gpart = ac.grad[jj][l][k] * phi;
                                let d = gpart + ac.p[jj][l] * dphi[k];
                                v[1] += rho * u[jj] * u[k] * d;
                                v[3] += st[jj][k] * d;
                                v[5] += st[jj][k] * gpart;
                                v[6] += rho * u[jj] * u[k] * gpart;
                                if jj == k {
                                    div += d;
                                }
                            }
                        }
                        v[2] += pr * div;
                        let o = &mut out[s * 2 + l];
                        for q in 0..7 {
                            o[q] += v[q] * area;
                        }
                    }
                }
            }
            out
        })
        .collect();

    let times = traj.sample_times();
    let w = trapezoid_weights(&times);
    let mut rep = DefectReport { bound, ..DefectReport::default() };
    for sl in 0..ns * 2 {
        for prof in 0..2 {
            let mut it = [0.0; 6];
            let (mut cd, mut cc) = (0.0, 0.0);
            it[0] = dict.temporal(prof, times[0]).0 * sums[0][sl][0];
            for (n, t) in times.iter().enumerate() {
                let (tau, dtau) = dict.temporal(prof, *t);
                let v = &sums[n][sl];
                it[1] += w[n] * dtau * v[0];
                it[2] += w[n] * tau * v[1];
                it[3] += w[n] * tau * v[2];
                it[4] += w[n] * tau * v[3];
                it[5] += w[n] * tau * v[4];
                cd += w[n] * tau * v[5];
                cc += w[n] * tau * v[6];
            }
            for q in 0..6 {
                rep.terms[q] = rep.terms[q].max(it[q].abs());
            }
            rep.diffusive_commutator = rep.diffusive_commutator.max(cd.abs());
            rep.convective_commutator = rep.convective_commutator.max(cc.abs());
        }
    }
    rep.diffusive_ratio = rep.diffusive_commutator / bound;
    rep.convective_ratio = rep.convective_commutator / bound;
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    Paper { alpha: f64, delta: f64 },
    Generalized { radii: Vec<RadiusEntry>, delta: f64 },
    /// Every run hole-free; a control for the study machinery.
    Unperforated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub epsilons: Vec<f64>,
    pub mode: StudyMode,
    #[serde(default = "default_shape")]
    pub shape: HoleShape,
    #[serde(default)]
    pub fluid: FluidParams,
    /// Cells per side, shared by the reference and every perforated run.
    pub nx: usize,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Number of stored time samples after the initial one.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Bump centers per axis.
    #[serde(default = "default_dict")]
    pub dictionary_centers: usize,
    /// Pressure-integrability exponent; `gamma - 1.1` when absent.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Capacity-calibrated friction in unresolved hole cells.
    #[serde(default = "default_true")]
    pub subgrid_friction: bool,
}

fn default_shape() -> HoleShape {
    HoleShape::Disk
}
fn default_t_end() -> f64 {
    0.25
}
fn default_cfl() -> f64 {
    0.4
}
fn default_samples() -> usize {
    25
}
fn default_dict() -> usize {
    3
}
fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn paper(epsilons: Vec<f64>, alpha: f64, delta: f64, nx: usize) -> Self {
        Self {
            epsilons,
            mode: StudyMode::Paper { alpha, delta },
            shape: HoleShape::Disk,
            fluid: FluidParams::default(),
            nx,
            t_end: default_t_end(),
            cfl: default_cfl(),
            samples: default_samples(),
            dictionary_centers: default_dict(),
            theta: None,
            subgrid_friction: true,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(self.fluid.gamma - 1.1)
    }

    pub fn perforation(&self, epsilon: f64) -> Option<PerforationConfig> {
        let (schedule, alpha, delta) = match &self.mode {
            StudyMode::Paper { alpha, delta } => (Schedule::Paper, *alpha, *delta),
            StudyMode::Generalized { radii, delta } => (Schedule::Generalized(radii.clone()), 2.5, *delta),
            StudyMode::Unperforated => return None,
        };
        Some(PerforationConfig {
            epsilon,
            alpha,
            delta,
            shape: self.shape.clone(),
            schedule,
            placement: Placement::Lattice,
            l2_bounds: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.fluid.validate_for_study()?;
        if self.epsilons.is_empty() {
            return Err(Error::InvalidConfig("study needs at least one epsilon".into()));
        }
        if self.nx < 8 {
            return Err(Error::InvalidConfig(format!("nx = {} is below 8", self.nx)));
        }
        if !(self.t_end > 0.0 && self.cfl > 0.0 && self.samples > 0) {
            return Err(Error::InvalidConfig("t_end, cfl and samples must be positive".into()));
        }
        let theta = self.theta();
        if !(theta > 0.0 && theta < self.fluid.gamma - 1.0) {
            return Err(Error::ThetaOutOfRange { theta, gamma: self.fluid.gamma });
        }
        for &e in &self.epsilons {
            if let Some(p) = self.perforation(e) {
                p.validate()?;
            }
        }
        Ok(())
    }
}

/// Quantities of one run that should stay bounded uniformly in `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunBounds {
    /// `sup_t ||rho||_{L^gamma}`.
    pub sup_rho_lgamma: f64,
    /// `(int int |grad u|^2)^(1/2)`.
    pub grad_u_l2: f64,
    pub pressure_integrability: f64,
    /// `(p, ||rho||_{L^p((0,T) x D)})`.
    pub rho_lp: Vec<(f64, f64)>,
    pub max_energy: f64,
    /// Energy-inequality constant `c` with `defect <= c (h + dt) E(0)`.
    pub energy_defect_c: f64,
    pub mass_drift: f64,
    pub min_density: f64,
}

impl RunBounds {
    pub fn all_finite(&self) -> bool {
        [self.sup_rho_lgamma, self.grad_u_l2, self.pressure_integrability, self.max_energy, self.energy_defect_c]
            .iter()
            .chain(self.rho_lp.iter().map(|(_, v)| v))
            .all(|v| v.is_finite())
    }
}

/// Per-epsilon weak-error metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorReport {
    pub epsilon: f64,
    pub a: f64,
    pub varpi: f64,
    pub holes: usize,
    pub solid_cells: usize,
    pub subgrid_cells: usize,
    pub dict_err_rho: f64,
    pub dict_err_momentum: f64,
    pub dict_err_pressure: f64,
    /// `||u_eps - u_ref||_{L^2(L^2)}`, recorded without a threshold.
    pub strong_velocity_l2: f64,
    pub bounds: RunBounds,
    pub defects: DefectReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope_rho: Option<f64>,
    pub slope_momentum: Option<f64>,
    pub slope_pressure: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub dt: f64,
    pub steps: usize,
    pub reference: RunBounds,
    pub rows: Vec<WeakErrorReport>,
    pub fits: ScalingFit,
    pub uniform_bounds_finite: bool,
    /// `max / min` of the pressure-integrability values over the sweep.
    pub pressure_band: f64,
}

impl StudyReport {
    pub const CSV_HEADER: &'static str = "epsilon,a,varpi,holes,solid_cells,subgrid_cells,dict_err_rho,dict_err_momentum,dict_err_pressure,strong_velocity_l2,sup_rho_lgamma,grad_u_l2,pressure_integrability,energy_defect_c,mass_drift,I1,I2,I3,I4,I5,I6,diffusive_commutator,convective_commutator,commutator_bound";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let b = &r.bounds;
            let d = &r.defects;
            s.push_str(&format!(
                "{},{:e},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.epsilon,
                r.a,
                r.varpi,
                r.holes,
                r.solid_cells,
                r.subgrid_cells,
                r.dict_err_rho,
                r.dict_err_momentum,
                r.dict_err_pressure,
                r.strong_velocity_l2,
                b.sup_rho_lgamma,
                b.grad_u_l2,
                b.pressure_integrability,
                b.energy_defect_c,
                b.mass_drift,
                d.terms[0],
                d.terms[1],
                d.terms[2],
                d.terms[3],
                d.terms[4],
                d.terms[5],
                d.diffusive_commutator,
                d.convective_commutator,
                d.bound
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Least-squares slope of `log y` against `log x`; `None` without two
/// positive points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn run_bounds(traj: &Trajectory, theta: f64) -> Result<RunBounds> {
    let g = traj.grid;
    let gamma = traj.gamma;
    let area = g.cell_area();
    let w = trapezoid_weights(&traj.sample_times());
    let sup_rho_lgamma = traj
        .snapshots
        .iter()
        .map(|s| (s.rho.iter().map(|r| r.powf(gamma)).sum::<f64>() * area).powf(1.0 / gamma))
        .fold(0.0, f64::max);
    let grad_u_l2 = traj
        .snapshots
        .iter()
        .zip(&w)
        .map(|(s, wn)| {
            let u = crate::mac::FaceField { grid: g, ux: s.ux.clone(), uy: s.uy.clone() };
            wn * u.grad_lq_pow(2.0)
        })
        .sum::<f64>()
        .sqrt();
    let pi = pressure_integrability(traj, theta)?;
    let ps = [gamma, gamma + theta, 2.0 * gamma - 1.05];
    let rho_lp = ps
        .iter()
        .map(|&p| {
            let v: f64 = traj.snapshots.iter().zip(&w).map(|(s, wn)| wn * s.rho.iter().map(|r| r.powf(p)).sum::<f64>() * area).sum();
            (p, v.powf(1.0 / p))
        })
        .collect();
    let ledger = energy_audit(traj);
    Ok(RunBounds {
        sup_rho_lgamma,
        grad_u_l2,
        pressure_integrability: pi,
        rho_lp,
        max_energy: ledger.entries.iter().map(|e| e.kinetic + e.internal).fold(0.0, f64::max),
        energy_defect_c: ledger.defect_constant(g.h, traj.dt),
        mass_drift: ledger.max_mass_drift(),
        min_density: traj
            .snapshots
            .iter()
            .flat_map(|s| s.rho.iter().zip(&traj.cells).filter(|(_, c)| !c.is_solid()).map(|(r, _)| *r))
            .fold(f64::INFINITY, f64::min),
    })
}

fn strong_velocity_error(a: &Trajectory, b: &Trajectory) -> f64 {
    let area = a.grid.cell_area();
    let w = trapezoid_weights(&a.sample_times());
    a.snapshots
        .iter()
        .zip(&b.snapshots)
        .zip(&w)
        .map(|((sa, sb), wn)| {
            let d: f64 = sa.ux.iter().zip(&sb.ux).chain(sa.uy.iter().zip(&sb.uy)).map(|(x, y)| (x - y).powi(2)).sum();
            wn * d * area
        })
        .sum::<f64>()
        .sqrt()
}

/// Geometry, mask and solver of one perforated run.
pub fn perforated_solver(config: &StudyConfig, epsilon: f64) -> Result<(HoleSet, Solver)> {
    let grid = Grid::unit_square(config.nx);
    let holes = match config.perforation(epsilon) {
        Some(p) => generate_centers(&p)?,
        None => HoleSet::empty(epsilon, 1e-3, 2.0),
    };
    let mask = if holes.count() == 0 { GridMask::all_fluid(grid) } else { rasterize(&holes, config.nx) };
    let mut solver = Solver::new(config.fluid.clone(), mask, Boundary::default())?;
    if config.subgrid_friction && holes.count() > 0 {
        solver = solver.with_subgrid_friction(&holes);
    }
    Ok((holes, solver))
}

/// Fixed time step and run options shared by every run of a study, derived
/// from the hole-free initial state alone.
pub fn study_run_options(config: &StudyConfig) -> Result<RunOptions> {
    let grid = Grid::unit_square(config.nx);
    let solver = Solver::new(config.fluid.clone(), GridMask::all_fluid(grid), Boundary::default())?;
    let s0 = InitialData::default_bump(grid).into_state(&solver)?;
    let dt0 = 0.9 * solver.stable_dt(&s0, config.cfl);
    let steps = (config.t_end / dt0).ceil().max(1.0) as usize;
    let dt = config.t_end / steps as f64;
    let every = steps.div_ceil(config.samples).max(1);
    Ok(RunOptions { t_end: config.t_end, dt, snapshot_every: every, cfl: config.cfl })
}

pub fn reference_run(config: &StudyConfig) -> Result<Trajectory> {
    let grid = Grid::unit_square(config.nx);
    let opts = study_run_options(config)?;
    let solver = Solver::new(config.fluid.clone(), GridMask::all_fluid(grid), Boundary::default())?;
    let s0 = InitialData::default_bump(grid).into_state(&solver)?;
    run(&solver, s0, &opts)
}

pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let grid = Grid::unit_square(config.nx);
    let opts = study_run_options(config)?;
    let theta = config.theta();
    let dict = TestDictionary::with_centers(config.dictionary_centers, config.t_end);
    let reference = reference_run(config)?;
    let ref_rho = SampledField::density(&reference);
    let ref_p = SampledField::pressure(&reference);
    let ref_mx = SampledField::momentum_x(&reference);
    let ref_my = SampledField::momentum_y(&reference);
    let ref_bounds = run_bounds(&reference, theta)?;
    let alpha = match config.mode {
        StudyMode::Paper { alpha, .. } => alpha,
        _ => 2.5,
    };

    let rows: Vec<WeakErrorReport> = config
        .epsilons
        .par_iter()
        .map(|&eps| -> Result<WeakErrorReport> {
            let (holes, solver) = perforated_solver(config, eps)?;
            let s0 = InitialData::default_bump(grid).into_state(&solver)?;
            let traj = run(&solver, s0, &opts)?;
            let dict_err_rho = weak_error(&SampledField::density(&traj), &ref_rho, &dict)?;
            let dict_err_pressure = weak_error(&SampledField::pressure(&traj), &ref_p, &dict)?;
            let dict_err_momentum = weak_error(&SampledField::momentum_x(&traj), &ref_mx, &dict)?
                .max(weak_error(&SampledField::momentum_y(&traj), &ref_my, &dict)?);
            let defects = if holes.count() > 0 {
                let corrector = CorrectorField::new(holes.clone())?;
                momentum_defect_terms(&traj, &corrector, &dict, alpha)
            } else {
                DefectReport { bound: eps.powf((alpha - 2.0) / 2.0), ..DefectReport::default() }
            };
            let mask = solver.mask();
            Ok(WeakErrorReport {
                epsilon: eps,
                a: holes.a,
                varpi: holes.varpi,
                holes: holes.count(),
                solid_cells: mask.solid_count(),
                subgrid_cells: mask.subgrid_cells().count(),
                dict_err_rho,
                dict_err_momentum,
                dict_err_pressure,
                strong_velocity_l2: strong_velocity_error(&traj, &reference),
                bounds: run_bounds(&traj, theta)?,
                defects,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let fits = ScalingFit {
        slope_rho: loglog_slope(&eps, &rows.iter().map(|r| r.dict_err_rho).collect::<Vec<_>>()),
        slope_momentum: loglog_slope(&eps, &rows.iter().map(|r| r.dict_err_momentum).collect::<Vec<_>>()),
        slope_pressure: loglog_slope(&eps, &rows.iter().map(|r| r.dict_err_pressure).collect::<Vec<_>>()),
    };
    let pis: Vec<f64> = rows.iter().map(|r| r.bounds.pressure_integrability).collect();
    let pressure_band = pis.iter().copied().fold(0.0, f64::max) / pis.iter().copied().fold(f64::INFINITY, f64::min);
    let uniform_bounds_finite = ref_bounds.all_finite() && rows.iter().all(|r| r.bounds.all_finite());
    let steps = (config.t_end / opts.dt).round() as usize;
    Ok(StudyReport {
        config: config.clone(),
        dt: opts.dt,
        steps,
        reference: ref_bounds,
        rows,
        fits,
        uniform_bounds_finite,
        pressure_band,
    })
}
