//! Logarithmic cut-off profiles and the divergence-free matrix corrector
//! `Phi = I - sum_i (y_i I + grad^perp y_i (x) (x - z_i)^perp)`.
//!
//! All norms are computed by per-hole polar quadrature, independent of any
//! solver grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::domain::HoleSet;
use crate::error::{Error, Result};
use crate::quadrature::{polar_integral, radial_integral, GaussLegendre};

pub type Mat2 = [[f64; 2]; 2];
/// `g[j][l][k] = d_k M_{jl}`.
pub type Tensor3 = [[[f64; 2]; 2]; 2];

/// `y(r)`: 1 on `[0, a)`, `log(varpi a / r) / log varpi` on `[a, varpi a)`,
/// 0 beyond.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialCutoff {
    pub a: f64,
    pub varpi: f64,
}

impl RadialCutoff {
    pub fn new(a: f64, varpi: f64) -> Result<Self> {
        if !(a > 0.0) || !(varpi > 1.0) {
            return Err(Error::InvalidScale(format!("cut-off needs a > 0 and varpi > 1 (a = {a}, varpi = {varpi})")));
        }
        Ok(Self { a, varpi })
    }

    pub fn outer(&self) -> f64 {
        self.varpi * self.a
    }

    pub fn log_varpi(&self) -> f64 {
        self.varpi.ln()
    }

    pub fn value(&self, r: f64) -> f64 {
        if r < self.a {
            1.0
        } else if r < self.outer() {
            1.0 - (r / self.a).ln() / self.log_varpi()
        } else {
            0.0
        }
    }

    /// `y'(r)`, outer-branch value on the circles `r = a` and `r = varpi a`.
    pub fn derivative(&self, r: f64) -> f64 {
        if r >= self.a && r < self.outer() {
            -1.0 / (r * self.log_varpi())
        } else {
            0.0
        }
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        if r >= self.a && r < self.outer() {
            1.0 / (r * r * self.log_varpi())
        } else {
            0.0
        }
    }
}

/// `theta(r)`: 1 on `[0, varpi a / 2)`, linear down to 0 at `varpi a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauCutoff {
    pub a: f64,
    pub varpi: f64,
}

impl PlateauCutoff {
    pub fn outer(&self) -> f64 {
        self.varpi * self.a
    }

    pub fn value(&self, r: f64) -> f64 {
        let b = self.outer();
        if r < 0.5 * b {
            1.0
        } else if r < b {
            2.0 * (b - r) / b
        } else {
            0.0
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let b = self.outer();
        if r >= 0.5 * b && r < b {
            -2.0 / b
        } else {
            0.0
        }
    }
}

pub fn eval_scalar(cutoff: &RadialCutoff, r: f64) -> f64 {
    cutoff.value(r)
}

pub fn eval_plateau(cutoff: &PlateauCutoff, r: f64) -> f64 {
    cutoff.value(r)
}

/// Closed form of `||grad y||_{L^q(R^2)}^q`. Not clamped as `varpi -> 1`.
pub fn scalar_grad_norm(cutoff: &RadialCutoff, q: f64) -> f64 {
    let l = cutoff.log_varpi().abs();
    if (q - 2.0).abs() < 1e-14 {
        2.0 * PI / l
    } else {
        2.0 * PI / l.powf(q) * cutoff.a.powf(2.0 - q) * (cutoff.varpi.powf(2.0 - q) - 1.0) / (2.0 - q)
    }
}

/// `||grad y||_{L^q(R^2)}^q` by log-graded Gauss-Legendre quadrature of the
/// pointwise derivative.
pub fn scalar_grad_norm_quadrature(cutoff: &RadialCutoff, q: f64, shells: usize) -> f64 {
    let gl = GaussLegendre::new(16);
    gl.integrate_composite(cutoff.a.ln(), cutoff.outer().ln(), shells, |s| {
        let r = s.exp();
        cutoff.derivative(r).abs().powf(q) * 2.0 * PI * r * r
    })
}

/// Closed-form `Phi_eps` and its gradient for a hole set.
#[derive(Clone, Debug)]
pub struct CorrectorField {
    holes: HoleSet,
    cutoff: RadialCutoff,
    buckets: Vec<Vec<u32>>,
    nb: usize,
}

impl CorrectorField {
    /// Fails with [`Error::InvalidScale`] when annuli overlap.
    pub fn new(holes: HoleSet) -> Result<Self> {
        let cutoff = RadialCutoff::new(holes.a, holes.varpi)?;
        let b = cutoff.outer();
        if holes.count() > 1 && holes.min_pair_distance() < 2.0 * b {
            return Err(Error::InvalidScale(format!(
                "cut-off annuli of radius {b} overlap (min center distance {})",
                holes.min_pair_distance()
            )));
        }
        let nb = ((0.5 / b).floor() as usize).clamp(1, 256);
        let mut buckets = vec![Vec::new(); nb * nb];
        let cell = 1.0 / nb as f64;
        let clamp = |v: f64| ((v / cell).floor().max(0.0) as usize).min(nb - 1);
        for (idx, z) in holes.centers.iter().enumerate() {
            for j in clamp(z[1] - b)..=clamp(z[1] + b) {
                for i in clamp(z[0] - b)..=clamp(z[0] + b) {
                    buckets[j * nb + i].push(idx as u32);
                }
            }
        }
        Ok(Self { holes, cutoff, buckets, nb })
    }

    pub fn holes(&self) -> &HoleSet {
        &self.holes
    }

    pub fn cutoff(&self) -> &RadialCutoff {
        &self.cutoff
    }

    /// Index of the hole whose ball `B_{varpi a}` contains `x`.
    pub fn active_hole(&self, x: [f64; 2]) -> Option<usize> {
        let cell = 1.0 / self.nb as f64;
        let i = ((x[0] / cell).floor().max(0.0) as usize).min(self.nb - 1);
        let j = ((x[1] / cell).floor().max(0.0) as usize).min(self.nb - 1);
        let b = self.cutoff.outer();
        self.buckets[j * self.nb + i].iter().map(|&k| k as usize).find(|&k| {
            let z = self.holes.centers[k];
            (x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2) < b * b
        })
    }

    /// `Phi(x)`.
    pub fn eval(&self, x: [f64; 2]) -> Mat2 {
        match self.active_hole(x) {
            None => [[1.0, 0.0], [0.0, 1.0]],
            Some(k) => single_hole_value(&self.cutoff, self.holes.centers[k], x),
        }
    }

    /// `grad Phi(x)` with `g[j][l][k] = d_k Phi_{jl}`.
    pub fn grad(&self, x: [f64; 2]) -> Tensor3 {
        match self.active_hole(x) {
            None => [[[0.0; 2]; 2]; 2],
            Some(k) => single_hole_grad(&self.cutoff, self.holes.centers[k], x),
        }
    }

    /// Row-wise divergence `sum_k d_k Phi_{jk}` by central differences of
    /// [`CorrectorField::eval`] with step `h`.
    pub fn fd_divergence(&self, x: [f64; 2], h: f64) -> [f64; 2] {
        let mut d = [0.0; 2];
        for k in 0..2 {
            let mut p = x;
            let mut m = x;
            p[k] += h;
            m[k] -= h;
            let (fp, fm) = (self.eval(p), self.eval(m));
            for (j, dj) in d.iter_mut().enumerate() {
                *dj += (fp[j][k] - fm[j][k]) / (2.0 * h);
            }
        }
        d
    }
}

fn single_hole_value(c: &RadialCutoff, z: [f64; 2], x: [f64; 2]) -> Mat2 {
    let w = [x[0] - z[0], x[1] - z[1]];
    let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if r < c.a {
        return [[0.0; 2]; 2];
    }
    let y = c.value(r);
    let g = c.derivative(r) / r;
    let p = [-w[1], w[0]];
    let mut m = [[0.0; 2]; 2];
    for j in 0..2 {
        for l in 0..2 {
            let id = if j == l { 1.0 } else { 0.0 };
            m[j][l] = id - (y * id + g * p[j] * p[l]);
        }
    }
    m
}

fn single_hole_grad(c: &RadialCutoff, z: [f64; 2], x: [f64; 2]) -> Tensor3 {
    let w = [x[0] - z[0], x[1] - z[1]];
    let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
    let mut t = [[[0.0; 2]; 2]; 2];
    if r < c.a {
        return t;
    }
    let y1 = c.derivative(r);
    let y2 = c.second_derivative(r);
    let g = y1 / r;
    let g1 = (y2 * r - y1) / (r * r);
    let p = [-w[1], w[0]];
    // dp[j][k] = d_k p_j
    let dp = [[0.0, -1.0], [1.0, 0.0]];
    for j in 0..2 {
        for l in 0..2 {
            let id = if j == l { 1.0 } else { 0.0 };
            for k in 0..2 {
                let dpsi = y1 * (w[k] / r) * id
                    + g1 * (w[k] / r) * p[j] * p[l]
                    + g * (dp[j][k] * p[l] + p[j] * dp[l][k]);
                t[j][l][k] = -dpsi;
            }
        }
    }
    t
}

fn frobenius3(t: &Tensor3) -> f64 {
    t.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn frobenius2(m: &Mat2) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smooth vector test function with analytic gradient.
pub trait VectorTestFunction: Sync {
    fn value(&self, x: [f64; 2]) -> [f64; 2];
    /// `g[l][k] = d_k phi_l`.
    fn gradient(&self, x: [f64; 2]) -> Mat2;

    /// `||phi||_{L^p(D)}`, `p = inf` for the sup norm.
    fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            let n = 512;
            let mut m: f64 = 0.0;
            for j in 0..=n {
                for i in 0..=n {
                    let v = self.value([i as f64 / n as f64, j as f64 / n as f64]);
                    m = m.max((v[0] * v[0] + v[1] * v[1]).sqrt());
                }
            }
            return m;
        }
        let gl = GaussLegendre::new(8);
        let s = gl.integrate_composite(0.0, 1.0, 48, |y| {
            gl.integrate_composite(0.0, 1.0, 48, |x| {
                let v = self.value([x, y]);
                (v[0] * v[0] + v[1] * v[1]).sqrt().powf(p)
            })
        });
        s.powf(1.0 / p)
    }
}

/// `phi(x) = (1 - |x - c|^2 / R^2)^2 e` inside `B_R(c)`, zero outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpField {
    pub center: [f64; 2],
    pub radius: f64,
    pub direction: [f64; 2],
}

impl BumpField {
    fn profile(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let s = (d[0] * d[0] + d[1] * d[1]) / (self.radius * self.radius);
        if s >= 1.0 {
            return (0.0, [0.0; 2]);
        }
        let v = (1.0 - s) * (1.0 - s);
        let dv = -4.0 * (1.0 - s) / (self.radius * self.radius);
        (v, [dv * d[0], dv * d[1]])
    }
}

impl VectorTestFunction for BumpField {
    fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let (v, _) = self.profile(x);
        [v * self.direction[0], v * self.direction[1]]
    }

    fn gradient(&self, x: [f64; 2]) -> Mat2 {
        let (_, g) = self.profile(x);
        let e = self.direction;
        [[e[0] * g[0], e[0] * g[1]], [e[1] * g[0], e[1] * g[1]]]
    }
}

/// Constant vector field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantField(pub [f64; 2]);

impl VectorTestFunction for ConstantField {
    fn value(&self, _x: [f64; 2]) -> [f64; 2] {
        self.0
    }

    fn gradient(&self, _x: [f64; 2]) -> Mat2 {
        [[0.0; 2]; 2]
    }
}

const ANGULAR_PANELS: usize = 24;

fn check_shells(shells: usize) -> Result<()> {
    if shells < 8 {
        return Err(Error::ResolutionTooCoarse(format!("{shells} quadrature shells per annulus, need at least 8")));
    }
    Ok(())
}

/// Sum over holes of a per-hole polar integral, in hole order.
fn sum_over_holes(field: &CorrectorField, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let parts: Vec<f64> = (0..field.holes.count()).into_par_iter().map(f).collect();
    parts.iter().sum()
}

/// `||grad Phi||_{L^2(D)}^2` by polar quadrature of the pointwise gradient.
pub fn grad_corrector_l2_squared(field: &CorrectorField, shells: usize) -> Result<f64> {
    check_shells(shells)?;
    let gl = GaussLegendre::new(12);
    let c = field.cutoff;
    Ok(sum_over_holes(field, |k| {
        let z = field.holes.centers[k];
        polar_integral(&gl, z, c.a, c.outer(), shells, ANGULAR_PANELS, |r, t| {
            let x = [z[0] + r * t.cos(), z[1] + r * t.sin()];
            frobenius3(&single_hole_grad(&c, z, x)).powi(2)
        })
    }))
}

/// `||grad Phi||_{L^2(D)}^2 / eps^(alpha - 2)`.
pub fn critical_scaling_ratio(field: &CorrectorField, alpha: f64, shells: usize) -> Result<f64> {
    let eps = field.holes.epsilon;
    Ok(grad_corrector_l2_squared(field, shells)? / eps.powf(alpha - 2.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub epsilon: f64,
    pub q: f64,
    pub norm_name: String,
    pub closed_form: f64,
    pub quadrature: f64,
    pub paper_bound: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutoffNormReport {
    pub rows: Vec<NormRow>,
}

impl CutoffNormReport {
    pub const HEADER: &'static str = "epsilon,q,norm_name,closed_form,quadrature,paper_bound,ratio";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{:e}\n",
                r.epsilon, r.q, r.norm_name, r.closed_form, r.quadrature, r.paper_bound, r.ratio
            ));
        }
        s
    }

    pub fn find(&self, name: &str, q: f64) -> Option<&NormRow> {
        self.rows.iter().find(|r| r.norm_name == name && r.q == q)
    }
}

fn ratio(v: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        v / bound
    } else {
        0.0
    }
}

/// Tabulates cut-off and corrector norms over `D` for each `q`.
///
/// `closed_form` integrates the exact radial expression against the exact
/// clipped angular measure; `quadrature` evaluates the corrector pointwise on
/// a 2D polar rule.
pub fn corrector_norm_audit(field: &CorrectorField, qs: &[f64], shells: usize) -> Result<CutoffNormReport> {
    check_shells(shells)?;
    let gl = GaussLegendre::new(12);
    let c = field.cutoff;
    let h = &field.holes;
    let eps = h.epsilon;
    let n = h.count() as f64;
    let l = c.log_varpi();
    let b = c.outer();
    let mut rows = Vec::new();
    let mut push = |q: f64, name: &str, closed: f64, quad: f64, bound: f64| {
        rows.push(NormRow {
            epsilon: eps,
            q,
            norm_name: name.to_string(),
            closed_form: closed,
            quadrature: quad,
            paper_bound: bound,
            ratio: ratio(quad, bound),
        });
    };
    for &q in qs {
        if !(q >= 1.0) {
            return Err(Error::InvalidConfig(format!("norm exponent q = {q} must be >= 1")));
        }
        let closed = sum_over_holes(field, |k| {
            radial_integral(&gl, h.centers[k], c.a, b, shells, |r| (1.0 / (r * l)).powf(q))
        });
        let quad = sum_over_holes(field, |k| {
            let z = h.centers[k];
            polar_integral(&gl, z, c.a, b, shells, ANGULAR_PANELS, |r, t| {
                let _ = t;
                c.derivative(r).abs().powf(q)
            })
        });
        let bound = if (q - 2.0).abs() < 1e-14 {
            n / l
        } else {
            n * c.a.powf(2.0 - q) * (c.varpi.powf(2.0 - q) - 1.0).abs() / l.powf(q)
        };
        push(q, "grad_cutoff_lq_pow", closed, quad, bound);

        // |Phi - I|_F is sqrt 2 on the hole disk; on the ramp the
        // eigenvalues of Psi are y and y - 1/L.
        let closed = sum_over_holes(field, |k| {
            let z = h.centers[k];
            let inner = radial_integral(&gl, z, 0.0, c.a, 4, |_| 2f64.powf(0.5 * q));
            let ramp = radial_integral(&gl, z, c.a, b, shells, |r| {
                let y = c.value(r);
                (y * y + (y - 1.0 / l).powi(2)).sqrt().powf(q)
            });
            inner + ramp
        });
        let quad = sum_over_holes(field, |k| {
            let z = h.centers[k];
            let eval = |r: f64, t: f64| {
                let x = [z[0] + r * t.cos(), z[1] + r * t.sin()];
                let m = single_hole_value(&c, z, x);
                frobenius2(&[[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]]).powf(q)
            };
            polar_integral(&gl, z, 0.0, c.a, 4, ANGULAR_PANELS, eval)
                + polar_integral(&gl, z, c.a, b, shells, ANGULAR_PANELS, eval)
        });
        let bound = if n > 0.0 { eps.powf(-2.0 / q) * b.powf(2.0 / q) } else { 0.0 };
        push(q, "phi_minus_identity_lq", closed.powf(1.0 / q), quad.powf(1.0 / q), bound);
    }
    if n > 0.0 {
        // sup-type quantities: dense radial sampling
        let samples = 20_000;
        let (mut ysup, mut rysup, mut dev) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..=samples {
            let r = b * 1.1 * s as f64 / samples as f64;
            ysup = ysup.max(c.value(r).abs());
            rysup = rysup.max(r * c.derivative(r).abs());
            let x = [h.centers[0][0] + r, h.centers[0][1]];
            let m = single_hole_value(&c, h.centers[0], x);
            dev = dev.max(spectral_norm(&[[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]]));
        }
        push(f64::INFINITY, "cutoff_sup", 1.0, ysup, 1.0);
        push(f64::INFINITY, "r_grad_cutoff_sup", 1.0 / l, rysup, 1.0 / l);
        push(f64::INFINITY, "phi_minus_identity_sup", 1.0f64.max(1.0 / l), dev, 1.0 + 1.0 / l);
    } else {
        push(f64::INFINITY, "cutoff_sup", 0.0, 0.0, 0.0);
        push(f64::INFINITY, "r_grad_cutoff_sup", 0.0, 0.0, 0.0);
        push(f64::INFINITY, "phi_minus_identity_sup", 0.0, 0.0, 0.0);
    }
    // |grad Phi|_F^2 = 4 / (r L)^2 on the ramp
    let closed = sum_over_holes(field, |k| {
        radial_integral(&gl, h.centers[k], c.a, b, shells, |r| 4.0 / (r * l).powi(2))
    });
    let quad = grad_corrector_l2_squared(field, shells)?;
    let bound = if n > 0.0 { 1.0 / (eps * l.sqrt()) } else { 0.0 };
    push(2.0, "grad_phi_l2", closed.sqrt(), quad.sqrt(), bound);
    Ok(CutoffNormReport { rows })
}

fn spectral_norm(m: &Mat2) -> f64 {
    // largest singular value of a 2x2 matrix
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    (0.5 * (tr + disc)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutatorReport {
    pub q: f64,
    /// `||grad(Phi phi) - Phi grad phi||_{L^q(D)}`.
    pub norm: f64,
    /// `||phi||_{L^{2q/(2-q)}}`.
    pub phi_norm: f64,
    /// `eps^-1 |log varpi|^-1/2 ||phi||_{L^{2q/(2-q)}}`.
    pub bound: f64,
    pub ratio: f64,
}

/// Pointwise commutator `D_{jk} = sum_l d_k Phi_{jl} phi_l`.
pub fn commutator_pointwise(field: &CorrectorField, phi: &dyn VectorTestFunction, x: [f64; 2]) -> Mat2 {
    let g = field.grad(x);
    let v = phi.value(x);
    let mut d = [[0.0; 2]; 2];
    for (j, row) in d.iter_mut().enumerate() {
        for (k, djk) in row.iter_mut().enumerate() {
            *djk = g[j][0][k] * v[0] + g[j][1][k] * v[1];
        }
    }
    d
}

/// `||grad(Phi phi) - Phi grad phi||_{L^q(D)}` and its ratio to
/// `eps^-1 |log varpi|^-1/2 ||phi||_{L^{2q/(2-q)}}`, for `1 <= q <= 2`.
pub fn commutator_defect<F: VectorTestFunction>(
    field: &CorrectorField,
    phi: &F,
    q: f64,
    shells: usize,
) -> Result<CommutatorReport> {
    if !(1.0..=2.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("commutator exponent q = {q} must lie in [1, 2]")));
    }
    check_shells(shells)?;
    let gl = GaussLegendre::new(12);
    let c = field.cutoff;
    let h = &field.holes;
    let s = sum_over_holes(field, |k| {
        let z = h.centers[k];
        polar_integral(&gl, z, c.a, c.outer(), shells, ANGULAR_PANELS, |r, t| {
            let x = [z[0] + r * t.cos(), z[1] + r * t.sin()];
            let g = single_hole_grad(&c, z, x);
            let v = phi.value(x);
            let mut acc = 0.0;
            for j in 0..2 {
                for kk in 0..2 {
                    let d = g[j][0][kk] * v[0] + g[j][1][kk] * v[1];
                    acc += d * d;
                }
            }
            acc.sqrt().powf(q)
        })
    });
    let norm = s.powf(1.0 / q);
    let p = if (q - 2.0).abs() < 1e-14 { f64::INFINITY } else { 2.0 * q / (2.0 - q) };
    let phi_norm = phi.lp_norm(p);
    let bound = if h.count() > 0 { phi_norm / (h.epsilon * c.log_varpi().sqrt()) } else { 0.0 };
    Ok(CommutatorReport { q, norm, phi_norm, bound, ratio: ratio(norm, bound) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_centers, PerforationConfig};

    fn single(a: f64, varpi: f64) -> CorrectorField {
        CorrectorField::new(HoleSet::explicit(0.5, a, varpi, vec![[0.5, 0.5]])).unwrap()
    }

    #[test]
    fn scalar_branch_values() {
        let c = RadialCutoff::new(0.01, 16.0).unwrap();
        assert_eq!(c.value(0.01), 1.0);
        assert_eq!(c.value(0.16), 0.0);
        assert!((c.value(0.01 * 4.0) - 0.5).abs() < 1e-14);
        assert!((c.value(0.01 - 1e-15) - c.value(0.01)).abs() < 1e-12);
        let p = PlateauCutoff { a: 0.01, varpi: 16.0 };
        assert_eq!(p.value(0.08), 1.0);
        assert!((p.value(0.12) - 0.5).abs() < 1e-14);
        assert_eq!(p.value(0.16), 0.0);
    }

    #[test]
    fn closed_form_examples() {
        let c = RadialCutoff::new(0.01, 10.0).unwrap();
        assert!((scalar_grad_norm(&c, 2.0) - 2.0 * PI / 10f64.ln()).abs() < 1e-12);
        assert!((scalar_grad_norm(&c, 2.0) - 2.72876).abs() < 1e-5);
        // 2 pi a (varpi - 1) / ln varpi = 0.2455880
        assert!((scalar_grad_norm(&c, 1.0) - 0.245588).abs() < 1e-6);
        let near = RadialCutoff::new(0.01, 1.0 + 1e-9).unwrap();
        assert!(scalar_grad_norm(&near, 2.0) > 1e9);
    }

    #[test]
    fn corrector_is_zero_in_hole_and_identity_outside() {
        let f = single(0.01, 10.0);
        assert_eq!(f.eval([0.5, 0.505]), [[0.0; 2]; 2]);
        assert_eq!(f.eval([0.5, 0.7]), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(f.grad([0.5, 0.7]), [[[0.0; 2]; 2]; 2]);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let f = single(0.01, 10.0);
        let h = 1e-6;
        for k in 0..50 {
            let t = 0.37 * k as f64;
            let r = 0.012 + 0.085 * (k as f64 / 50.0);
            let x = [0.5 + r * t.cos(), 0.5 + r * t.sin()];
            let g = f.grad(x);
            for d in 0..2 {
                let mut p = x;
                let mut m = x;
                p[d] += h;
                m[d] -= h;
                let (fp, fm) = (f.eval(p), f.eval(m));
                for j in 0..2 {
                    for l in 0..2 {
                        let fd = (fp[j][l] - fm[j][l]) / (2.0 * h);
                        assert!((fd - g[j][l][d]).abs() < 1e-4 * (1.0 + fd.abs()), "{fd} {}", g[j][l][d]);
                    }
                }
            }
        }
    }

    #[test]
    fn analytic_divergence_vanishes() {
        let f = single(0.01, 10.0);
        for k in 0..40 {
            let t = 0.9 * k as f64;
            let r = 0.011 + 0.002 * k as f64;
            let g = f.grad([0.5 + r * t.cos(), 0.5 + r * t.sin()]);
            for row in g {
                assert!((row[0][0] + row[1][1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn corrector_deviation_bounded() {
        let f = single(0.01, 10.0);
        let rep = corrector_norm_audit(&f, &[2.0], 8).unwrap();
        let row = rep.find("phi_minus_identity_sup", f64::INFINITY).unwrap();
        assert!(row.quadrature <= 1.0 + 1.0 / 10f64.ln());
    }

    #[test]
    fn audit_quadrature_matches_closed_form() {
        let f = single(0.01, 10.0);
        let rep = corrector_norm_audit(&f, &[1.0, 2.0, 3.0], 12).unwrap();
        for r in &rep.rows {
            if r.q.is_finite() {
                assert!((r.quadrature - r.closed_form).abs() <= 1e-9 * r.closed_form.abs(), "{r:?}");
            }
        }
        // |grad Phi|^2 integrates to 8 pi / ln varpi, within [2 pi / L, 10 * 2 pi / L]
        let g = rep.find("grad_phi_l2", 2.0).unwrap().quadrature.powi(2);
        assert!((g - 8.0 * PI / 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_holes_give_zero_norms() {
        let f = CorrectorField::new(HoleSet::empty(0.5, 0.01, 10.0)).unwrap();
        let rep = corrector_norm_audit(&f, &[1.0, 2.0], 8).unwrap();
        assert!(rep.rows.iter().all(|r| r.quadrature == 0.0));
    }

    #[test]
    fn coarse_resolution_rejected() {
        assert!(matches!(corrector_norm_audit(&single(0.01, 10.0), &[2.0], 4), Err(Error::ResolutionTooCoarse(_))));
    }

    #[test]
    fn commutator_of_constant_is_grad_phi_column() {
        let f = single(0.01, 10.0);
        let rep = commutator_defect(&f, &ConstantField([1.0, 0.0]), 2.0, 12).unwrap();
        // |grad(Phi e1)|^2 = sum_{j,k} (d_k Phi_j1)^2, half of |grad Phi|^2 by symmetry
        let gl = GaussLegendre::new(12);
        let c = *f.cutoff();
        let direct = polar_integral(&gl, [0.5, 0.5], c.a, c.outer(), 12, 24, |r, t| {
            let g = f.grad([0.5 + r * t.cos(), 0.5 + r * t.sin()]);
            (0..2).flat_map(|j| (0..2).map(move |k| (j, k))).map(|(j, k)| g[j][0][k].powi(2)).sum()
        });
        assert!((rep.norm - direct.sqrt()).abs() < 1e-10);
        let zero = commutator_defect(&f, &ConstantField([0.0, 0.0]), 1.0, 8).unwrap();
        assert_eq!(zero.norm, 0.0);
    }

    #[test]
    fn overlapping_annuli_rejected() {
        let h = HoleSet::explicit(0.1, 0.01, 10.0, vec![[0.3, 0.3], [0.45, 0.3]]);
        assert!(CorrectorField::new(h).is_err());
    }

    #[test]
    fn lattice_corrector_vanishes_on_solid_cells() {
        let holes = generate_centers(&PerforationConfig::generalized_with_varpi(0.2, 0.05, 2.0)).unwrap();
        let mask = crate::domain::rasterize(&holes, 64);
        let f = CorrectorField::new(holes).unwrap();
        for (k, s) in mask.cells.iter().enumerate() {
            if s.is_solid() {
                let (i, j) = (k % 64, k / 64);
                assert_eq!(f.eval(mask.grid.cell_center(i, j)), [[0.0; 2]; 2]);
            }
        }
    }
}
