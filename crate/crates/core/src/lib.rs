//! Compressible Navier-Stokes flow in planar domains perforated by many
//! tiny holes, and the numerical audits of its homogenization limit.

pub mod bogovskii;
pub mod config;
pub mod cutoff;
pub mod domain;
pub mod error;
pub mod homogenize;
pub mod io;
pub mod linalg;
pub mod mac;
pub mod ns2d;
pub mod quadrature;
pub mod stokes;

pub use bogovskii::{bog_audit, norm_constant, BogAuditRow, BogConstant, ComposeReport, ComposedBogovskii};
pub use config::{RunConfig, SCHEMA_VERSION};
pub use cutoff::{corrector_norm_audit, CorrectorField, CutoffNormReport, RadialCutoff};
pub use domain::{
    cutoff_outer_factor, generate_centers, hole_radius, perforated_area_defect, rasterize, CellState,
    GeometryDocument, GridMask, HoleSet, HoleShape, PerforationConfig, Placement, RadiusEntry, Schedule,
};
pub use error::{Error, Result};
pub use homogenize::{run_study, StudyConfig, StudyMode, StudyReport, TestDictionary, WeakErrorReport};
pub use io::FieldDump;
pub use mac::{CellField, FaceField, FieldKind, Grid};
pub use ns2d::{Boundary, EnergyLedger, FluidParams, FluidState, InitialData, RunOptions, Solver, Trajectory};
