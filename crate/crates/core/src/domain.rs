//! Perforated domains `D_eps = D \ U (z_i + a F)` on the unit square.
//!
//! Hole centers sit on a lattice of spacing `2 eps` inside the `eps`-margin
//! of the square, every hole is a scaled copy `a F` of a reference shape
//! `F` contained in the unit disk, and each hole carries a cut-off annulus
//! of outer radius `varpi a = eps^(1 + delta)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mac::Grid;

/// Hole radius `a = exp(-eps^-alpha)` of the subcritical regime.
///
/// Fails with [`Error::Underflow`] once the value is no longer a normal
/// double; at `alpha = 2.5` this happens already around `eps = 0.2`.
pub fn hole_radius(epsilon: f64, alpha: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if !(alpha > 2.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must exceed 2")));
    }
    let a = (-epsilon.powf(-alpha)).exp();
    if a < f64::MIN_POSITIVE {
        return Err(Error::Underflow { epsilon, alpha });
    }
    Ok(a)
}

/// Outer factor `varpi = eps^(1 + delta) / a` of the cut-off annulus.
pub fn cutoff_outer_factor(epsilon: f64, delta: f64, a: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("delta = {delta} must be positive")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidScale(format!("hole radius {a} must be positive")));
    }
    let outer = epsilon.powf(1.0 + delta);
    let varpi = outer / a;
    if !(varpi > 1.0) {
        return Err(Error::InvalidScale(format!(
            "varpi = {varpi} <= 1: hole radius {a} too large for delta = {delta} at eps = {epsilon}"
        )));
    }
    if varpi * a > epsilon {
        return Err(Error::InvalidScale(format!("varpi a = {} exceeds eps = {epsilon}", varpi * a)));
    }
    Ok(varpi)
}

/// Reference hole `F`, a compact subset of the closed unit disk containing
/// the origin in its interior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleShape {
    Disk,
    /// Star-shaped polygon with vertex `k` at angle `2 pi k / n` and radius
    /// `radii[k]`.
    StarPolygon { radii: Vec<f64> },
}

impl HoleShape {
    pub fn validate(&self) -> Result<()> {
        if let HoleShape::StarPolygon { radii } = self {
            if radii.len() < 3 {
                return Err(Error::InvalidConfig("star polygon needs at least 3 vertices".into()));
            }
            if radii.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
                return Err(Error::InvalidConfig("star polygon radii must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match self {
            HoleShape::Disk => Vec::new(),
            HoleShape::StarPolygon { radii } => {
                let n = radii.len() as f64;
                radii
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        let t = 2.0 * PI * k as f64 / n;
                        [r * t.cos(), r * t.sin()]
                    })
                    .collect()
            }
        }
    }

    /// Area of `F`; shoelace formula for polygons.
    pub fn area(&self) -> f64 {
        match self {
            HoleShape::Disk => PI,
            HoleShape::StarPolygon { .. } => {
                let v = self.vertices();
                let n = v.len();
                0.5 * (0..n)
                    .map(|k| {
                        let (p, q) = (v[k], v[(k + 1) % n]);
                        p[0] * q[1] - q[0] * p[1]
                    })
                    .sum::<f64>()
                    .abs()
            }
        }
    }

    /// Membership of a point in reference coordinates.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            HoleShape::Disk => p[0] * p[0] + p[1] * p[1] < 1.0,
            HoleShape::StarPolygon { radii } => {
                let n = radii.len();
                let t = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
                let k = ((t / (2.0 * PI) * n as f64).floor() as usize).min(n - 1);
                let v = self.vertices();
                let (a, b) = (v[k], v[(k + 1) % n]);
                // same side of edge a->b as the origin
                let cross = |o: [f64; 2]| (b[0] - a[0]) * (o[1] - a[1]) - (b[1] - a[1]) * (o[0] - a[0]);
                cross(p) * cross([0.0, 0.0]) > 0.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEntry {
    pub epsilon: f64,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `a = exp(-eps^-alpha)`.
    Paper,
    /// User-supplied radius per `eps`.
    Generalized(Vec<RadiusEntry>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Lattice,
    JitteredLattice { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerforationConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub delta: f64,
    #[serde(default = "default_shape")]
    pub shape: HoleShape,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    /// Enforce `delta <= min(alpha - 1, (alpha - 2) / 2)`, the range in which
    /// the perforated Bogovskii constant stays bounded in `L^2`.
    #[serde(default)]
    pub l2_bounds: bool,
}

fn default_shape() -> HoleShape {
    HoleShape::Disk
}
fn default_schedule() -> Schedule {
    Schedule::Paper
}
fn default_placement() -> Placement {
    Placement::Lattice
}

impl PerforationConfig {
    pub fn paper(epsilon: f64, alpha: f64, delta: f64) -> Self {
        Self {
            epsilon,
            alpha,
            delta,
            shape: HoleShape::Disk,
            schedule: Schedule::Paper,
            placement: Placement::Lattice,
            l2_bounds: false,
        }
    }

    pub fn generalized(epsilon: f64, a: f64, delta: f64) -> Self {
        Self {
            schedule: Schedule::Generalized(vec![RadiusEntry { epsilon, a }]),
            ..Self::paper(epsilon, 2.5, delta)
        }
    }

    /// Generalized schedule with `delta` chosen so that `varpi` equals the
    /// requested value: `eps^(1 + delta) = varpi a`.
    pub fn generalized_with_varpi(epsilon: f64, a: f64, varpi: f64) -> Self {
        let delta = (varpi * a).ln() / epsilon.ln() - 1.0;
        Self::generalized(epsilon, a, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if !(self.alpha > 2.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} must exceed 2", self.alpha)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig(format!("delta = {} must be positive", self.delta)));
        }
        if self.l2_bounds {
            let cap = (self.alpha - 1.0).min((self.alpha - 2.0) / 2.0);
            if self.delta > cap + 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "delta = {} exceeds min(alpha - 1, (alpha - 2)/2) = {cap}",
                    self.delta
                )));
            }
        }
        self.shape.validate()?;
        let a = self.radius()?;
        cutoff_outer_factor(self.epsilon, self.delta, a)?;
        Ok(())
    }

    /// Hole radius for this configuration's `eps`.
    pub fn radius(&self) -> Result<f64> {
        match &self.schedule {
            Schedule::Paper => hole_radius(self.epsilon, self.alpha),
            Schedule::Generalized(table) => table
                .iter()
                .find(|e| (e.epsilon - self.epsilon).abs() <= 1e-12 * self.epsilon)
                .map(|e| e.a)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("no generalized radius for eps = {}", self.epsilon))
                }),
        }
    }
}

/// Hole centers with their common radius and cut-off annulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleSet {
    pub epsilon: f64,
    pub a: f64,
    pub varpi: f64,
    pub shape: HoleShape,
    pub centers: Vec<[f64; 2]>,
    /// Set when the `eps`-margin of the square is empty (`eps >= 1/2`) and a
    /// single hole was placed at the midpoint instead.
    pub boundary_relaxed: bool,
}

impl HoleSet {
    pub fn empty(epsilon: f64, a: f64, varpi: f64) -> Self {
        Self { epsilon, a, varpi, shape: HoleShape::Disk, centers: Vec::new(), boundary_relaxed: false }
    }

    pub fn explicit(epsilon: f64, a: f64, varpi: f64, centers: Vec<[f64; 2]>) -> Self {
        Self { centers, ..Self::empty(epsilon, a, varpi) }
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn outer_radius(&self) -> f64 {
        self.varpi * self.a
    }

    /// Measured constant `|K_eps| eps^2`.
    pub fn count_constant(&self) -> f64 {
        self.count() as f64 * self.epsilon * self.epsilon
    }

    pub fn contains(&self, index: usize, p: [f64; 2]) -> bool {
        let z = self.centers[index];
        self.shape.contains([(p[0] - z[0]) / self.a, (p[1] - z[1]) / self.a])
    }

    pub fn min_pair_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for (k, p) in self.centers.iter().enumerate() {
            for q in &self.centers[k + 1..] {
                m = m.min(dist(*p, *q));
            }
        }
        m
    }

    pub fn min_boundary_distance(&self) -> f64 {
        self.centers
            .iter()
            .map(|z| z[0].min(1.0 - z[0]).min(z[1]).min(1.0 - z[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Points per axis of a lattice of the given spacing strictly inside
/// `(margin, 1 - margin)`.
fn lattice_points_per_axis(spacing: f64, margin: f64) -> usize {
    let span = 1.0 - 2.0 * margin;
    if span <= 0.0 {
        return 0;
    }
    let mut k = (span / spacing).ceil() as usize;
    // strictness: the outermost points must stay inside the margin
    while k > 1 && spacing * (k - 1) as f64 >= span {
        k -= 1;
    }
    k.max(1)
}

/// Places hole centers satisfying `|z_i - z_j| >= 2 eps` and
/// `dist(z_i, boundary) > eps`.
pub fn generate_centers(config: &PerforationConfig) -> Result<HoleSet> {
    config.validate()?;
    let eps = config.epsilon;
    let a = config.radius()?;
    let varpi = cutoff_outer_factor(eps, config.delta, a)?;
    // The jittered variant widens spacing and margin by the jitter radius so
    // any perturbation below eps/4 keeps both constraints.
    let (spacing, margin) = match config.placement {
        Placement::Lattice => (2.0 * eps, eps),
        Placement::JitteredLattice { .. } => (2.5 * eps, 1.25 * eps),
    };
    let k = lattice_points_per_axis(spacing, margin);
    let mut relaxed = false;
    let mut centers = Vec::with_capacity(k * k);
    if k == 0 {
        relaxed = true;
        centers.push([0.5, 0.5]);
    } else {
        let start = 0.5 - 0.5 * spacing * (k - 1) as f64;
        for jy in 0..k {
            for jx in 0..k {
                centers.push([start + spacing * jx as f64, start + spacing * jy as f64]);
            }
        }
    }
    if let Placement::JitteredLattice { seed } = config.placement {
        centers = jitter(&centers, eps, seed, relaxed)?;
    }
    Ok(HoleSet { epsilon: eps, a, varpi, shape: config.shape.clone(), centers, boundary_relaxed: relaxed })
}

const JITTER_ATTEMPTS: usize = 1000;

fn jitter(base: &[[f64; 2]], eps: f64, seed: u64, relaxed: bool) -> Result<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<[f64; 2]> = Vec::with_capacity(base.len());
    let rmax = 0.25 * eps;
    for (index, z) in base.iter().enumerate() {
        let mut accepted = None;
        for _ in 0..JITTER_ATTEMPTS {
            let r = rmax * rng.gen::<f64>().sqrt();
            let t = 2.0 * PI * rng.gen::<f64>();
            if r >= rmax {
                continue;
            }
            let p = [z[0] + r * t.cos(), z[1] + r * t.sin()];
            let boundary_ok =
                relaxed || p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]) > eps;
            if boundary_ok && placed.iter().all(|q| dist(p, *q) >= 2.0 * eps) {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => placed.push(p),
            None => return Err(Error::JitterExhausted { index, attempts: JITTER_ATTEMPTS }),
        }
    }
    Ok(placed)
}

/// Discrete state of a grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Fluid,
    /// Cell center inside hole `i`.
    Solid(u32),
    /// Cell containing the center of hole `i`, which covers no cell center.
    SubgridHole(u32),
}

impl CellState {
    pub fn code(self) -> f64 {
        match self {
            CellState::Fluid => 0.0,
            CellState::Solid(_) => 1.0,
            CellState::SubgridHole(_) => 2.0,
        }
    }

    pub fn is_solid(self) -> bool {
        matches!(self, CellState::Solid(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMask {
    pub grid: Grid,
    pub cells: Vec<CellState>,
    /// Fraction of holes that cover no cell center.
    pub subgrid_fraction: f64,
}

impl GridMask {
    pub fn all_fluid(grid: Grid) -> Self {
        Self { grid, cells: vec![CellState::Fluid; grid.cell_count()], subgrid_fraction: 0.0 }
    }

    pub fn solid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_solid()).count()
    }

    pub fn subgrid_cells(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.cells.iter().enumerate().filter_map(|(k, c)| match c {
            CellState::SubgridHole(i) => Some((k, *i)),
            _ => None,
        })
    }

    pub fn is_solid(&self, cell: usize) -> bool {
        self.cells[cell].is_solid()
    }
}

/// Marks every cell whose center lies in some `z_i + a F` as solid; holes
/// covering no cell center are flagged on the cell containing their center.
pub fn rasterize(holes: &HoleSet, nx: usize) -> GridMask {
    assert!(nx >= 2, "rasterize needs at least 2 cells per side");
    let grid = Grid::unit_square(nx);
    let a = holes.a;
    let mut cells: Vec<CellState> = (0..grid.ny)
        .into_par_iter()
        .flat_map_iter(|j| {
            let y = (j as f64 + 0.5) * grid.h;
            let mut row = vec![CellState::Fluid; grid.nx];
            for (idx, z) in holes.centers.iter().enumerate() {
                if (y - z[1]).abs() >= a {
                    continue;
                }
                let lo = (((z[0] - a) / grid.h - 0.5).floor().max(0.0)) as usize;
                let hi = ((((z[0] + a) / grid.h - 0.5).ceil()).max(0.0) as usize).min(grid.nx - 1);
                for (i, state) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    if holes.contains(idx, grid.cell_center(i, j)) {
                        *state = CellState::Solid(idx as u32);
                    }
                }
            }
            row
        })
        .collect();
    let mut covered = vec![false; holes.count()];
    for c in &cells {
        if let CellState::Solid(i) = c {
            covered[*i as usize] = true;
        }
    }
    let mut subgrid = 0;
    for (idx, z) in holes.centers.iter().enumerate() {
        if !covered[idx] {
            subgrid += 1;
            let (i, j) = grid.cell_of(*z);
            cells[grid.cell(i, j)] = CellState::SubgridHole(idx as u32);
        }
    }
    let subgrid_fraction = if holes.count() == 0 { 0.0 } else { subgrid as f64 / holes.count() as f64 };
    GridMask { grid, cells, subgrid_fraction }
}

/// `|D \ D_eps| = sum_i |z_i + a F| = count a^2 |F|`.
pub fn perforated_area_defect(holes: &HoleSet) -> f64 {
    holes.count() as f64 * holes.a * holes.a * holes.shape.area()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

/// JSON description of a generated geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub epsilon: f64,
    pub alpha: f64,
    pub delta: f64,
    pub a: f64,
    pub varpi: f64,
    pub centers: Vec<[f64; 2]>,
    pub shape: HoleShape,
    pub grid: GridInfo,
}

impl GeometryDocument {
    pub fn new(config: &PerforationConfig, holes: &HoleSet, grid: Grid) -> Self {
        Self {
            epsilon: holes.epsilon,
            alpha: config.alpha,
            delta: config.delta,
            a: holes.a,
            varpi: holes.varpi,
            centers: holes.centers.clone(),
            shape: holes.shape.clone(),
            grid: GridInfo { nx: grid.nx, ny: grid.ny, h: grid.h },
        }
    }
}
