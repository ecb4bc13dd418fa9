//! Gauss-Legendre rules and the polar integration helpers used by the norm
//! audits.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }

    /// Composite rule over `panels` equal sub-intervals of `[a, b]`.
    pub fn integrate_composite(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        let step = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * step;
                self.integrate(lo, lo + step, &mut f)
            })
            .sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Angular intervals `[t0, t1]` (radians, `t0 < t1`, within `[0, 2 pi)`
/// after normalization) of the circle of radius `r` about `c` that lie in
/// the open unit square.
pub fn arcs_in_unit_square(c: [f64; 2], r: f64) -> Vec<(f64, f64)> {
    // Crossing angles with each of the four edges.
    let mut cuts = vec![0.0, 2.0 * PI];
    let mut add = |d: f64, phase: f64| {
        // circle meets an edge at signed distance d along direction phase
        if d.abs() < r {
            let s = (d / r).acos();
            for t in [phase - s, phase + s] {
                cuts.push(t.rem_euclid(2.0 * PI));
            }
        }
    };
    add(1.0 - c[0], 0.0);
    add(c[0], PI);
    add(1.0 - c[1], 0.5 * PI);
    add(c[1], 1.5 * PI);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut arcs: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 - t0 < 1e-15 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let p = [c[0] + r * tm.cos(), c[1] + r * tm.sin()];
        if p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0 {
            match arcs.last_mut() {
                Some(last) if (last.1 - t0).abs() < 1e-15 => last.1 = t1,
                _ => arcs.push((t0, t1)),
            }
        }
    }
    arcs
}

/// Total angle of the circle of radius `r` about `c` inside the unit square.
pub fn angle_in_unit_square(c: [f64; 2], r: f64) -> f64 {
    arcs_in_unit_square(c, r).iter().map(|(a, b)| b - a).sum()
}

/// Radii in `(r0, r1)` at which the circle about `c` starts touching an edge
/// or passes a corner of the unit square; the clipped angle is smooth between
/// them.
fn kink_radii(c: [f64; 2], r0: f64, r1: f64) -> Vec<f64> {
    let mut k: Vec<f64> = vec![c[0], 1.0 - c[0], c[1], 1.0 - c[1]];
    for x in [0.0, 1.0] {
        for y in [0.0, 1.0] {
            k.push(((c[0] - x).powi(2) + (c[1] - y).powi(2)).sqrt());
        }
    }
    let mut k: Vec<f64> = k.into_iter().filter(|r| *r > r0 && *r < r1).collect();
    k.sort_by(|a, b| a.partial_cmp(b).unwrap());
    k
}

/// Pieces `(lo, hi, lo_is_kink)` of `[r0, r1]`.
fn radial_pieces(c: [f64; 2], r0: f64, r1: f64) -> Vec<(f64, f64, bool)> {
    let mut pts = vec![r0];
    pts.extend(kink_radii(c, r0, r1));
    pts.push(r1);
    pts.windows(2).enumerate().map(|(k, w)| (w[0], w[1], k > 0)).collect()
}

/// Integral over `[lo, hi]` where `g` may behave like `sqrt(x - lo)` at the
/// left end if `kink`; the substitution `x = lo + (hi - lo) u^2` removes it.
fn integrate_piece(gl: &GaussLegendre, lo: f64, hi: f64, panels: usize, kink: bool, g: impl Fn(f64) -> f64) -> f64 {
    if kink {
        let w = hi - lo;
        gl.integrate_composite(0.0, 1.0, panels, |u| g(lo + w * u * u) * 2.0 * w * u)
    } else {
        gl.integrate_composite(lo, hi, panels, g)
    }
}

/// Integrates `f(r)` times `r` times the angular measure inside the unit
/// square over `r0 <= r <= r1`, using log-graded panels when `r0 > 0`.
pub fn radial_integral(
    gl: &GaussLegendre,
    c: [f64; 2],
    r0: f64,
    r1: f64,
    shells: usize,
    f: impl Fn(f64) -> f64,
) -> f64 {
    let total_log = if r0 > 0.0 { (r1 / r0).ln() } else { 0.0 };
    radial_pieces(c, r0, r1)
        .into_iter()
        .map(|(lo, hi, kink)| {
            if lo > 0.0 {
                let panels = panels_for(shells, (hi / lo).ln(), total_log);
                integrate_piece(gl, lo.ln(), hi.ln(), panels, kink, |s| {
                    let r = s.exp();
                    f(r) * angle_in_unit_square(c, r) * r * r
                })
            } else {
                integrate_piece(gl, lo, hi, shells, kink, |r| f(r) * angle_in_unit_square(c, r) * r)
            }
        })
        .sum()
}

/// Integrates `f(r, t)` over the part of the annulus `r0 <= |x - c| <= r1`
/// inside the unit square, in polar coordinates about `c`.
pub fn polar_integral(
    gl: &GaussLegendre,
    c: [f64; 2],
    r0: f64,
    r1: f64,
    shells: usize,
    angular_panels: usize,
    f: impl Fn(f64, f64) -> f64,
) -> f64 {
    let angular = |r: f64| -> f64 {
        arcs_in_unit_square(c, r)
            .into_iter()
            .map(|(t0, t1)| {
                let n = ((t1 - t0) / (2.0 * PI) * angular_panels as f64).ceil().max(1.0) as usize;
                gl.integrate_composite(t0, t1, n, |t| f(r, t))
            })
            .sum()
    };
    let total_log = if r0 > 0.0 { (r1 / r0).ln() } else { 0.0 };
    radial_pieces(c, r0, r1)
        .into_iter()
        .map(|(lo, hi, kink)| {
            if lo > 0.0 {
                let panels = panels_for(shells, (hi / lo).ln(), total_log);
                integrate_piece(gl, lo.ln(), hi.ln(), panels, kink, |s| {
                    let r = s.exp();
                    angular(r) * r * r
                })
            } else {
                integrate_piece(gl, lo, hi, shells, kink, |r| angular(r) * r)
            }
        })
        .sum()
}

fn panels_for(shells: usize, piece: f64, total: f64) -> usize {
    if total <= 0.0 {
        return shells.max(1);
    }
    ((shells as f64 * piece / total).ceil() as usize).max(2)
}
