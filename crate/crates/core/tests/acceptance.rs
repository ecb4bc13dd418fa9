//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line on
//! stderr (bypassing libtest capture) and then asserts.

use std::io::Write;

use ph2d_core::bogovskii::{bog_audit, norm_constant};
use ph2d_core::cutoff::{
    commutator_defect, critical_scaling_ratio, scalar_grad_norm, scalar_grad_norm_quadrature, BumpField,
    CorrectorField, RadialCutoff,
};
use ph2d_core::domain::{generate_centers, rasterize, HoleShape, PerforationConfig, Placement};
use ph2d_core::homogenize::{run_study, StudyConfig, TestDictionary};
use ph2d_core::mac::{CellField, Grid};
use ph2d_core::ns2d::{
    energy_audit, renormalized_residual, run, BodyForce, Boundary, FluidParams, FluidState, InitialData, RunOptions,
    Solver, Square, Trajectory,
};
use ph2d_core::GridMask;

// pinned tolerances
const CUTOFF_REL_TOL: f64 = 1e-8;
const SCALING_BAND: f64 = 3.0;
const DIV_ORDER_MIN: f64 = 1.8;
const COMMUTATOR_BAND: f64 = 3.0;
const BOG_RESIDUAL_TOL: f64 = 1e-8;
const BOG_K: f64 = 100.0;
const BOG_C_EXAMPLE: f64 = 1.1807;
const BOG_C_TOL: f64 = 1e-3;
const CONSTANT_STATE_TOL: f64 = 1e-13;
const MASS_TOL: f64 = 1e-12;
const SOD_ORDER_MIN: f64 = 0.8;
const TREND_DECREASE_MIN: f64 = 0.2;
const PRESSURE_BAND: f64 = 2.0;
const RENORM_FACTOR_MIN: f64 = 1.5;

const SWEEP: [f64; 5] = [0.7, 0.6, 0.5, 0.45, 0.4];
const SHELLS: usize = 96;

fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} | {detail}");
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn sweep_field(eps: f64) -> CorrectorField {
    let holes = generate_centers(&PerforationConfig::paper(eps, 2.5, 0.25)).unwrap();
    CorrectorField::new(holes).unwrap()
}

#[test]
fn criterion_1_cutoff_closed_forms() {
    let mut worst: f64 = 0.0;
    for a in [0.01, 0.001] {
        for varpi in [10.0, 100.0] {
            let c = RadialCutoff::new(a, varpi).unwrap();
            for q in [1.0, 1.5, 2.0, 3.0] {
                let exact = scalar_grad_norm(&c, q);
                let quad = scalar_grad_norm_quadrature(&c, q, 32);
                worst = worst.max(((quad - exact) / exact).abs());
            }
        }
    }
    let example = scalar_grad_norm_quadrature(&RadialCutoff::new(0.01, 10.0).unwrap(), 2.0, 32);
    let example_err = (example - 2.0 * std::f64::consts::PI / 10f64.ln()).abs();
    let pass = worst <= CUTOFF_REL_TOL && (example - 2.72876).abs() < 1e-5 && example_err < 1e-12;
    report(1, pass, &format!("max relative error {worst:.2e} (tol {CUTOFF_REL_TOL:e}); q=2 example {example:.6}"));
    assert!(pass);
}

/// `max |div Phi|` by central differences at points of the annuli that stay
/// `>= 10 h` away from both branch circles.
fn fd_divergence_error(field: &CorrectorField, rel_h: f64) -> f64 {
    let c = field.cutoff();
    let mut worst: f64 = 0.0;
    for z in &field.holes().centers {
        for frac in [0.25, 0.5, 0.75] {
            let r = c.a * c.outer().powf(frac) / c.a.powf(frac);
            for k in 0..8 {
                let t = 0.3 + k as f64 * std::f64::consts::PI / 4.0;
                let x = [z[0] + r * t.cos(), z[1] + r * t.sin()];
                if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
                    continue;
                }
                let h = rel_h * r;
                let d = field.fd_divergence(x, h);
                worst = worst.max(d[0].abs().max(d[1].abs()));
            }
        }
    }
    worst
}

#[test]
fn criterion_2_corrector_scaling() {
    let mut ratios = Vec::new();
    let mut orders = Vec::new();
    let mut holes = Vec::new();
    for eps in SWEEP {
        let f = sweep_field(eps);
        holes.push(f.holes().count());
        ratios.push(critical_scaling_ratio(&f, 2.5, SHELLS).unwrap());
        let e0 = fd_divergence_error(&f, 0.02);
        let e1 = fd_divergence_error(&f, 0.01);
        orders.push((e0 / e1).log2());
    }
    let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = spread <= SCALING_BAND && min_order >= DIV_ORDER_MIN;
    report(
        2,
        pass,
        &format!(
            "|grad Phi|^2/eps^(alpha-2) = {ratios:.3?} (spread {spread:.3}, band {SCALING_BAND}); holes {holes:?}; fd div order min {min_order:.3}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_commutator_estimate() {
    let phi = BumpField { center: [0.5, 0.5], radius: 0.4, direction: [1.0, 0.0] };
    let mut details = Vec::new();
    let mut pass = true;
    for q in [1.0, 2.0] {
        let ratios: Vec<f64> =
            SWEEP.iter().map(|&e| commutator_defect(&sweep_field(e), &phi, q, SHELLS).unwrap().ratio).collect();
        let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
        pass &= spread <= COMMUTATOR_BAND && ratios.iter().all(|r| r.is_finite());
        details.push(format!("q={q}: ratios {ratios:.3?} spread {spread:.3}"));
    }
    report(3, pass, &format!("{} (band {COMMUTATOR_BAND})", details.join("; ")));
    assert!(pass);
}

fn bog_geometries() -> Vec<(String, PerforationConfig)> {
    let mut out = Vec::new();
    for eps in [0.5, 0.4, 0.3] {
        out.push((format!("paper eps={eps}"), PerforationConfig::paper(eps, 2.5, 0.25)));
    }
    out.push(("generalized eps=0.1 a=0.01 varpi=3".into(), PerforationConfig::generalized_with_varpi(0.1, 0.01, 3.0)));
    let mut jit = PerforationConfig::generalized_with_varpi(0.12, 0.008, 4.0);
    jit.placement = Placement::JitteredLattice { seed: 7 };
    out.push(("jittered eps=0.12 a=0.008 varpi=4".into(), jit));
    let mut star = PerforationConfig::generalized_with_varpi(0.15, 0.012, 3.0);
    star.shape = HoleShape::StarPolygon { radii: vec![1.0, 0.7, 1.0, 0.7, 1.0, 0.7] };
    out.push(("star eps=0.15 a=0.012 varpi=3".into(), star));
    out
}

#[test]
fn criterion_4_bogovskii() {
    let n = 256;
    let seeds = [11, 12, 13, 14];
    let mut rows = Vec::new();
    let mut configs = 0;
    for (name, cfg) in bog_geometries() {
        let holes = generate_centers(&cfg).unwrap();
        let mask = rasterize(&holes, n);
        let r = bog_audit(&holes, &mask, &[1.5, 2.0], &seeds).unwrap();
        let _ = writeln!(
            std::io::stderr(),
            "  bog {name}: holes {} max ratio {:.3}",
            holes.count(),
            r.iter().map(|x| x.measured_norm_ratio).fold(0.0, f64::max)
        );
        rows.extend(r);
        configs += 1;
    }
    let rhs = configs * seeds.len();
    let residual = rows.iter().map(|r| r.div_residual).fold(0.0, f64::max);
    let hole_max = rows.iter().map(|r| r.hole_max).fold(0.0, f64::max);
    let trace = rows.iter().map(|r| r.boundary_trace).fold(0.0, f64::max);
    let k = rows.iter().map(|r| r.measured_norm_ratio).fold(0.0, f64::max);
    let a = ph2d_core::hole_radius(0.5, 2.5).unwrap();
    let varpi = ph2d_core::cutoff_outer_factor(0.5, 0.25, a).unwrap();
    let c = norm_constant(0.5, 2.0, a, varpi).c;
    let pass = rhs >= 20
        && configs >= 6
        && residual <= BOG_RESIDUAL_TOL
        && hole_max == 0.0
        && trace == 0.0
        && k <= BOG_K
        && (c - BOG_C_EXAMPLE).abs() <= BOG_C_TOL;
    report(
        4,
        pass,
        &format!(
            "{rhs} rhs over {configs} geometries at {n}^2: residual {residual:.2e}, hole max {hole_max:e}, trace {trace:e}, K = {k:.3} (pinned {BOG_K}); C(0.5, 2) = {c:.5}"
        ),
    );
    assert!(pass);
}

fn sod(nx: usize) -> (Vec<f64>, f64) {
    let g = Grid::new(nx, 4, 1.0 / nx as f64);
    let params = FluidParams { gamma: 2.5, mu: 1e-3, eta: 0.0, force: BodyForce::Constant([0.0, 0.0]) };
    let bc = Boundary { periodic_x: false, periodic_y: true };
    let solver = Solver::new(params, GridMask::all_fluid(g), bc).unwrap();
    let s = FluidState::at_rest(CellField::from_fn(g, |p| if p[0] < 0.5 { 1.0 } else { 0.25 }));
    let dt = 0.8 * solver.stable_dt(&s, 0.4);
    let traj = run(&solver, s, &RunOptions { t_end: 0.15, dt, snapshot_every: usize::MAX, cfl: 0.4 }).unwrap();
    let drift = energy_audit(&traj).max_mass_drift();
    let last = traj.last();
    ((0..nx).map(|i| last.rho[g.cell(i, 0)]).collect(), drift)
}

fn l1_against_fine(coarse: &[f64], fine: &[f64]) -> f64 {
    let n = coarse.len() as f64;
    coarse.iter().zip(fine.chunks(2)).map(|(c, f)| (c - 0.5 * (f[0] + f[1])).abs()).sum::<f64>() / n
}

fn perforated_run(n: usize) -> (Trajectory, f64, f64) {
    let holes = generate_centers(&PerforationConfig::paper(0.6, 2.1, 0.04)).unwrap();
    let mask = rasterize(&holes, n);
    let solver = Solver::new(FluidParams::default(), mask, Boundary::default()).unwrap();
    let s = InitialData::default_bump(Grid::unit_square(n)).into_state(&solver).unwrap();
    let dt0 = 0.9 * solver.stable_dt(&s, 0.4);
    let steps = (0.25 / dt0).ceil();
    let dt = 0.25 / steps;
    let traj = run(&solver, s, &RunOptions { t_end: 0.25, dt, snapshot_every: 10, cfl: 0.4 }).unwrap();
    (traj, 1.0 / n as f64, dt)
}

#[test]
fn criterion_5_solver_integrity() {
    // constant state with holes, no force, 1000 steps
    let holes = generate_centers(&PerforationConfig::paper(0.6, 2.1, 0.04)).unwrap();
    let mask = rasterize(&holes, 32);
    let params = FluidParams { force: BodyForce::Constant([0.0, 0.0]), ..FluidParams::default() };
    let solver = Solver::new(params, mask, Boundary::default()).unwrap();
    let mut s = InitialData::at_rest(CellField::from_fn(Grid::unit_square(32), |_| 1.0)).into_state(&solver).unwrap();
    let s0 = s.clone();
    let dt = solver.stable_dt(&s, 0.4);
    for _ in 0..1000 {
        solver.step(&mut s, dt).unwrap();
    }
    let const_dev = s
        .rho
        .iter()
        .zip(&s0.rho)
        .map(|(a, b)| (a - b).abs())
        .chain(s.mx.iter().chain(&s.my).map(|m| m.abs()))
        .fold(0.0, f64::max);

    let mut mass_drift: f64 = 0.0;
    let mut min_rho = f64::INFINITY;
    let mut cs = Vec::new();
    for n in [64, 128] {
        let (traj, h, dt) = perforated_run(n);
        let ledger = energy_audit(&traj);
        mass_drift = mass_drift.max(ledger.max_mass_drift());
        min_rho = min_rho.min(
            traj.snapshots
                .iter()
                .flat_map(|sn| sn.rho.iter().zip(&traj.cells).filter(|(_, c)| !c.is_solid()).map(|(r, _)| *r))
                .fold(f64::INFINITY, f64::min),
        );
        cs.push(ledger.defect_constant(h, dt));
    }
    let energy_ok = cs[1] <= (2.0 * cs[0]).max(0.0);

    let (a, d1) = sod(256);
    let (b, d2) = sod(512);
    let (c, d3) = sod(1024);
    mass_drift = mass_drift.max(d1).max(d2).max(d3);
    let e1 = l1_against_fine(&a, &b);
    let e2 = l1_against_fine(&b, &c);
    let order = (e1 / e2).log2();
    let sod_min = a.iter().chain(&b).chain(&c).copied().fold(f64::INFINITY, f64::min);

    let pass = const_dev <= CONSTANT_STATE_TOL
        && mass_drift <= MASS_TOL
        && min_rho >= 0.0
        && sod_min >= 0.0
        && energy_ok
        && order >= SOD_ORDER_MIN;
    report(
        5,
        pass,
        &format!(
            "constant-state deviation {const_dev:.1e}; mass drift {mass_drift:.1e}; min rho {min_rho:.4}; energy c = {cs:.4?} (h = 1/64, 1/128); Sod L1 errors {e1:.3e}, {e2:.3e}, order {order:.3}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_homogenization_trend() {
    let config = StudyConfig::paper(vec![0.7, 0.6, 0.5], 2.1, 0.04, 512);
    let r = run_study(&config).unwrap();
    let rho: Vec<f64> = r.rows.iter().map(|x| x.dict_err_rho).collect();
    let mom: Vec<f64> = r.rows.iter().map(|x| x.dict_err_momentum).collect();
    let pis: Vec<f64> = r.rows.iter().map(|x| x.bounds.pressure_integrability).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]) && v[2] <= (1.0 - TREND_DECREASE_MIN) * v[0];
    let pass = decreasing(&rho) && decreasing(&mom) && r.pressure_band <= PRESSURE_BAND && r.uniform_bounds_finite;
    report(
        6,
        pass,
        &format!(
            "dict_err_rho {}; dict_err_momentum {}; pressure integrability {pis:.4?} (band {:.3}); dt {:.3e}",
            sci(&rho),
            sci(&mom),
            r.pressure_band,
            r.dt
        ),
    );
    assert!(pass);
}

fn smooth_run(n: usize) -> Trajectory {
    let g = Grid::unit_square(n);
    let solver = Solver::new(FluidParams::default(), GridMask::all_fluid(g), Boundary::default()).unwrap();
    let s = InitialData::default_bump(g).into_state(&solver).unwrap();
    let dt0 = 0.9 * solver.stable_dt(&s, 0.4);
    let steps = (0.25 / dt0).ceil();
    run(&solver, s, &RunOptions { t_end: 0.25, dt: 0.25 / steps, snapshot_every: 1, cfl: 0.4 }).unwrap()
}

#[test]
fn criterion_7_renormalized_continuity() {
    let dict = TestDictionary::new(0.25);
    let res: Vec<f64> = [64, 128, 256].iter().map(|&n| renormalized_residual(&smooth_run(n), &Square, &dict)).collect();
    let factors: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = factors.iter().all(|f| *f >= RENORM_FACTOR_MIN);
    report(7, pass, &format!("residuals {} at 64/128/256; factors {factors:.3?} (min {RENORM_FACTOR_MIN})", sci(&res)));
    assert!(pass);
}
