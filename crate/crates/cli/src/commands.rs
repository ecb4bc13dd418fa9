use serde_json::json;

use ph2d_core::bogovskii::{bog_audit, bog_audit_csv};
use ph2d_core::cutoff::{corrector_norm_audit, CorrectorField};
use ph2d_core::homogenize::{run_study, TestDictionary};
use ph2d_core::io::{with_config_header, FieldDump};
use ph2d_core::ns2d::{energy_audit, pressure_integrability, renormalized_residual, run, RunOptions, Solver, Square};
use ph2d_core::{CellField, Error, FieldKind, GeometryDocument, RunConfig};

use crate::manifest::OutputDir;

/// Failure mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": kind, "message": message, "exit_code": self.exit_code() }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() || matches!(e, Error::Io(_)) {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub seed: u64,
    pub out: &'a mut OutputDir,
}

impl Context<'_> {
    fn header(&self) -> String {
        serde_json::to_string(self.config).expect("config serializes")
    }

    fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let text = with_config_header(&self.header(), body);
        self.out.write(name, text.as_bytes())?;
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
        self.out.write(name, text.as_bytes())?;
        Ok(())
    }
}

pub fn gen_domain(ctx: &mut Context) -> Result<(), CliError> {
    let holes = ctx.config.holes()?;
    let mask = ctx.config.mask(&holes);
    let grid = ctx.config.grid();
    match &ctx.config.geometry.perforation {
        Some(p) => {
            let doc = GeometryDocument::new(p, &holes, grid);
            ctx.json("geometry.json", &doc)?;
        }
        None => ctx.json("geometry.json", &json!({ "holes": holes, "grid": grid }))?,
    }
    let mut centers = String::from("x,y\n");
    for c in &holes.centers {
        centers.push_str(&format!("{},{}\n", c[0], c[1]));
    }
    ctx.csv("centers.csv", &centers)?;
    let codes = CellField { grid, values: mask.cells.iter().map(|c| c.code()).collect() };
    ctx.out.write("mask.ph2d", &FieldDump::cell(&codes, 0.0).to_bytes())?;
    Ok(())
}

pub fn cutoff_audit(ctx: &mut Context) -> Result<(), CliError> {
    let holes = ctx.config.holes()?;
    let field = CorrectorField::new(holes)?;
    let report = corrector_norm_audit(&field, &ctx.config.solver.qs, ctx.config.solver.shells)?;
    ctx.csv("cutoff_norms.csv", &report.to_csv())
}

pub fn bog_audit_cmd(ctx: &mut Context) -> Result<(), CliError> {
    let holes = ctx.config.holes()?;
    let mask = ctx.config.mask(&holes);
    let seeds: Vec<u64> = (0..ctx.config.solver.rhs_count as u64).map(|k| ctx.seed.wrapping_add(k)).collect();
    let rows = bog_audit(&holes, &mask, &ctx.config.solver.bog_qs, &seeds)?;
    ctx.csv("bog_audit.csv", &bog_audit_csv(&rows))
}

pub fn solve(ctx: &mut Context) -> Result<(), CliError> {
    let cfg = ctx.config;
    let holes = cfg.holes()?;
    let mask = cfg.mask(&holes);
    let mut solver = Solver::new(cfg.fluid.clone(), mask, cfg.boundary())?;
    if cfg.solver.subgrid_friction && holes.count() > 0 {
        solver = solver.with_subgrid_friction(&holes);
    }
    let s0 = cfg.initial_data().into_state(&solver)?;
    let dt0 = 0.9 * solver.stable_dt(&s0, cfg.solver.cfl);
    let steps = (cfg.solver.t_end / dt0).ceil().max(1.0) as usize;
    let dt = if cfg.solver.t_end > 0.0 { cfg.solver.t_end / steps as f64 } else { dt0 };
    let opts = RunOptions {
        t_end: cfg.solver.t_end,
        dt,
        snapshot_every: steps.div_ceil(cfg.solver.samples).max(1),
        cfl: cfg.solver.cfl,
    };
    let traj = run(&solver, s0, &opts)?;
    let ledger = energy_audit(&traj);
    ctx.csv("ledger.csv", &ledger.to_csv())?;

    let h = cfg.grid().h;
    let theta = cfg.fluid.gamma - 1.1;
    let pi = if theta > 0.0 { pressure_integrability(&traj, theta).ok() } else { None };
    let renorm =
        if cfg.solver.t_end > 0.0 { Some(renormalized_residual(&traj, &Square, &TestDictionary::new(cfg.solver.t_end))) } else { None };
    let summary = json!({
        "holes": holes.count(),
        "steps": traj.records.len() - 1,
        "dt": dt,
        "snapshots": traj.snapshots.len(),
        "mass_drift": ledger.max_mass_drift(),
        "max_ei_defect": ledger.max_defect(),
        "energy_defect_c": ledger.defect_constant(h, dt),
        "renormalized_residual_square": renorm,
        "pressure_integrability": pi,
        "pressure_integrability_theta": theta,
    });
    ctx.json("solve_summary.json", &summary)?;
    if cfg.output.field_dumps {
        let last = traj.last();
        let g = traj.grid;
        for (name, kind, data) in [
            ("rho.ph2d", FieldKind::Cell, &last.rho),
            ("mx.ph2d", FieldKind::XFace, &last.mx),
            ("my.ph2d", FieldKind::YFace, &last.my),
        ] {
            let d = FieldDump::new(g, kind, last.t, data.clone())?;
            ctx.out.write(name, &d.to_bytes())?;
        }
    }
    Ok(())
}

pub fn study(ctx: &mut Context) -> Result<(), CliError> {
    let sc = ctx.config.study_config()?;
    let report = run_study(&sc)?;
    ctx.out.write("study.json", (report.to_json() + "\n").as_bytes())?;
    ctx.csv("study.csv", &report.to_csv())
}
