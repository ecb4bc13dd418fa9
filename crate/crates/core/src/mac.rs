//! Marker-and-cell (MAC) staggered grid carriers.
//!
//! Scalars live at cell centers, the x-velocity component on vertical faces
//! and the y-component on horizontal faces. Storage is row-major with the
//! x index running fastest:
//!
//! * cells: `nx * ny`, index `j * nx + i`, center `((i + 1/2) h, (j + 1/2) h)`
//! * x-faces: `(nx + 1) * ny`, index `j * (nx + 1) + i`, at `(i h, (j + 1/2) h)`
//! * y-faces: `nx * (ny + 1)`, index `j * nx + i`, at `((i + 1/2) h, j h)`

use serde::{Deserialize, Serialize};

/// Uniform Cartesian grid over `(0, nx h) x (0, ny h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

/// Location of a stored degree of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FieldKind {
    Cell = 0,
    XFace = 1,
    YFace = 2,
}

impl FieldKind {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FieldKind::Cell),
            1 => Some(FieldKind::XFace),
            2 => Some(FieldKind::YFace),
            _ => None,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64) -> Self {
        Self { nx, ny, h }
    }

    /// `n x n` cells covering the unit square.
    pub fn unit_square(n: usize) -> Self {
        Self { nx: n, ny: n, h: 1.0 / n as f64 }
    }

    pub fn len(&self, kind: FieldKind) -> usize {
        match kind {
            FieldKind::Cell => self.nx * self.ny,
            FieldKind::XFace => (self.nx + 1) * self.ny,
            FieldKind::YFace => self.nx * (self.ny + 1),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn xface(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    #[inline]
    pub fn yface(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    #[inline]
    pub fn xface_center(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.h, (j as f64 + 0.5) * self.h]
    }

    #[inline]
    pub fn yface_center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, j as f64 * self.h]
    }

    /// Position of the degree of freedom with flat index `idx`.
    pub fn position(&self, kind: FieldKind, idx: usize) -> [f64; 2] {
        match kind {
            FieldKind::Cell => self.cell_center(idx % self.nx, idx / self.nx),
            FieldKind::XFace => self.xface_center(idx % (self.nx + 1), idx / (self.nx + 1)),
            FieldKind::YFace => self.yface_center(idx % self.nx, idx / self.nx),
        }
    }

    /// Cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let clamp = |v: f64, n: usize| -> usize {
            let k = (v / self.h).floor();
            if k < 0.0 {
                0
            } else {
                (k as usize).min(n - 1)
            }
        };
        (clamp(p[0], self.nx), clamp(p[1], self.ny))
    }
}

/// Cell-centered scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.cell_count()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cell_count());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.cell_center(i, j)));
            }
        }
        Self { grid, values }
    }

    /// Integral by the midpoint rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn lq_pow(&self, q: f64) -> f64 {
        self.values.iter().map(|v| v.abs().powf(q)).sum::<f64>() * self.grid.cell_area()
    }

    pub fn l2_norm(&self) -> f64 {
        self.lq_pow(2.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Face-centered vector field (one component per face family).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    pub grid: Grid,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            ux: vec![0.0; grid.len(FieldKind::XFace)],
            uy: vec![0.0; grid.len(FieldKind::YFace)],
        }
    }

    /// Samples a vector function at face centers (normal component per face).
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                out.ux[grid.xface(i, j)] = f(grid.xface_center(i, j))[0];
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                out.uy[grid.yface(i, j)] = f(grid.yface_center(i, j))[1];
            }
        }
        out
    }

    /// Sets the normal component on the boundary of the rectangle to zero.
    pub fn zero_boundary_normal(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.ux[g.xface(0, j)] = 0.0;
            self.ux[g.xface(g.nx, j)] = 0.0;
        }
        for i in 0..g.nx {
            self.uy[g.yface(i, 0)] = 0.0;
            self.uy[g.yface(i, g.ny)] = 0.0;
        }
    }

    /// Discrete divergence `(ux[i+1] - ux[i] + uy[j+1] - uy[j]) / h` per cell.
    pub fn divergence(&self) -> CellField {
        let g = self.grid;
        let mut out = CellField::zeros(g);
        for j in 0..g.ny {
            for i in 0..g.nx {
                out.values[g.cell(i, j)] = (self.ux[g.xface(i + 1, j)] - self.ux[g.xface(i, j)]
                    + self.uy[g.yface(i, j + 1)]
                    - self.uy[g.yface(i, j)])
                    / g.h;
            }
        }
        out
    }

    /// Largest normal component on the outer boundary of the rectangle.
    pub fn boundary_trace(&self) -> f64 {
        let g = self.grid;
        let mut m = 0.0_f64;
        for j in 0..g.ny {
            m = m.max(self.ux[g.xface(0, j)].abs()).max(self.ux[g.xface(g.nx, j)].abs());
        }
        for i in 0..g.nx {
            m = m.max(self.uy[g.yface(i, 0)].abs()).max(self.uy[g.yface(i, g.ny)].abs());
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.ux.iter().chain(self.uy.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &FaceField) {
        for (a, b) in self.ux.iter_mut().zip(&other.ux) {
            *a += alpha * b;
        }
        for (a, b) in self.uy.iter_mut().zip(&other.uy) {
            *a += alpha * b;
        }
    }

    /// `sum |u_k|^q` over both components, face-weighted by `h^2`.
    pub fn lq_pow(&self, q: f64) -> f64 {
        let a = self.grid.cell_area();
        self.ux.iter().chain(self.uy.iter()).map(|v| v.abs().powf(q)).sum::<f64>() * a
    }

    /// Entrywise `sum_{j,k} int |d_k u_j|^q` of the MAC gradient, with the
    /// no-slip wall of the rectangle placed half a cell outside the tangential
    /// unknowns (ghost value `-u`). For `q = 2` this is the quadratic form of
    /// the five-point vector Laplacian used by the Stokes solver.
    pub fn grad_lq_pow(&self, q: f64) -> f64 {
        let g = self.grid;
        let h = g.h;
        let p = |d: f64| d.abs().powf(q);
        let mut acc = 0.0;
        // normal derivatives at cell centers
        for j in 0..g.ny {
            for i in 0..g.nx {
                acc += p((self.ux[g.xface(i + 1, j)] - self.ux[g.xface(i, j)]) / h) * h * h;
                acc += p((self.uy[g.yface(i, j + 1)] - self.uy[g.yface(i, j)]) / h) * h * h;
            }
        }
        // tangential derivatives at nodes; boundary nodes use the ghost
        // reflection over half a cell
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let wx = if i == 0 || i == g.nx { 0.5 } else { 1.0 };
                let wy = if j == 0 || j == g.ny { 0.5 } else { 1.0 };
                // d_y ux at node (i, j)
                let dy = if j == 0 {
                    2.0 * self.ux[g.xface(i, 0)] / h
                } else if j == g.ny {
                    -2.0 * self.ux[g.xface(i, g.ny - 1)] / h
                } else {
                    (self.ux[g.xface(i, j)] - self.ux[g.xface(i, j - 1)]) / h
                };
                acc += p(dy) * wx * wy * h * h;
                // d_x uy at node (i, j)
                let dx = if i == 0 {
                    2.0 * self.uy[g.yface(0, j)] / h
                } else if i == g.nx {
                    -2.0 * self.uy[g.yface(g.nx - 1, j)] / h
                } else {
                    (self.uy[g.yface(i, j)] - self.uy[g.yface(i - 1, j)]) / h
                };
                acc += p(dx) * wx * wy * h * h;
            }
        }
        acc
    }

    /// `||u||_q^q + ||grad u||_q^q`.
    pub fn w1q_pow(&self, q: f64) -> f64 {
        self.lq_pow(q) + self.grad_lq_pow(q)
    }
}
