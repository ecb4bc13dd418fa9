//! Direct solvers for the velocity block of the MAC Stokes system.

use ndarray::Array2;

/// Symmetric positive definite band matrix, factorized in place as `L L^T`.
///
/// Row `i` stores the entries `(i, i - d)` for `d = 0..=bandwidth` at
/// `i * (bandwidth + 1) + d`.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Builds the lower band from `(row, col, value)` triplets with
    /// `col <= row`; duplicates are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Option<Self> {
        let bw = entries.iter().map(|&(r, c, _)| r - c).max().unwrap_or(0);
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for &(r, c, v) in entries {
            debug_assert!(c <= r);
            band[r * w + (r - c)] += v;
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // sum over m in [max(i, j) - bw, j) of L[i][m] L[j][m]
                let mlo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (i - j)];
                for m in mlo..j {
                    s -= band[i * w + (i - m)] * band[j * w + (j - m)];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    band[i * w] = s.sqrt();
                } else {
                    band[i * w + (i - j)] = s / band[j * w];
                }
            }
        }
        Some(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Solves `L L^T x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = x[i];
            for m in lo..i {
                s -= self.band[i * w + (i - m)] * x[m];
            }
            x[i] = s / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            x[i] /= self.band[i * w];
            let xi = x[i];
            let lo = i.saturating_sub(self.bw);
            for m in lo..i {
                x[m] -= self.band[i * w + (i - m)] * xi;
            }
        }
    }
}

/// Boundary treatment of one direction of a separable 1D second difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeCondition {
    /// Unknowns at interior nodes `1..n`, value zero on the end nodes.
    NodeDirichlet,
    /// Unknowns at cell centers `0..n`, zero wall half a cell outside
    /// (ghost value `-u`).
    HalfCellDirichlet,
}

/// Orthonormal eigenbasis of the 1D second difference `tridiag(-1, 2, -1)`.
#[derive(Clone, Debug)]
struct Eigenbasis {
    vectors: Array2<f64>,
    values: Vec<f64>,
}

impl Eigenbasis {
    fn new(n: usize, cond: EdgeCondition) -> Self {
        let (m, offset) = match cond {
            EdgeCondition::NodeDirichlet => (n - 1, 1.0),
            EdgeCondition::HalfCellDirichlet => (n, 0.5),
        };
        let mut vectors = Array2::<f64>::zeros((m, m));
        let mut values = Vec::with_capacity(m);
        for k in 1..=m {
            let theta = std::f64::consts::PI * k as f64 / n as f64;
            values.push(2.0 - 2.0 * theta.cos());
            let mut norm = 0.0;
            for p in 0..m {
                let v = (theta * (p as f64 + offset)).sin();
                vectors[[p, k - 1]] = v;
                norm += v * v;
            }
            let norm = norm.sqrt();
            for p in 0..m {
                vectors[[p, k - 1]] /= norm;
            }
        }
        Self { vectors, values }
    }
}

/// Exact solver for `-Laplace_h u = b` on a rectangle of unknowns whose x and
/// y directions are each of one [`EdgeCondition`] type.
#[derive(Clone, Debug)]
pub struct SeparableLaplace {
    x: Eigenbasis,
    y: Eigenbasis,
    inv_h2: f64,
}

impl SeparableLaplace {
    pub fn new(nx: usize, xc: EdgeCondition, ny: usize, yc: EdgeCondition, h: f64) -> Self {
        Self { x: Eigenbasis::new(nx, xc), y: Eigenbasis::new(ny, yc), inv_h2: 1.0 / (h * h) }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.values.len(), self.y.values.len())
    }

    /// `b` is row-major with x fastest; overwritten by the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (mx, my) = self.shape();
        let rhs = ndarray::ArrayView2::from_shape((my, mx), b).expect("shape");
        let mut hat = self.y.vectors.t().dot(&rhs).dot(&self.x.vectors);
        for (j, row) in hat.rows_mut().into_iter().enumerate() {
            for (i, v) in row.into_iter().enumerate() {
                *v /= (self.x.values[i] + self.y.values[j]) * self.inv_h2;
            }
        }
        let sol = self.y.vectors.dot(&hat).dot(&self.x.vectors.t());
        for (dst, src) in b.iter_mut().zip(sol.iter()) {
            *dst = *src;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
