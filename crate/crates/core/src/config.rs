//! Versioned JSON run configuration.

use serde::{Deserialize, Serialize};

use crate::domain::{generate_centers, rasterize, GridMask, HoleSet, PerforationConfig};
use crate::error::{Error, Result};
use crate::homogenize::{StudyConfig, StudyMode};
use crate::mac::{CellField, Grid};
use crate::ns2d::{Boundary, FluidParams, InitialData};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub fluid: FluidParams,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Absent for the hole-free square.
    #[serde(default)]
    pub perforation: Option<PerforationConfig>,
    #[serde(default = "default_nx")]
    pub nx: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { perforation: None, nx: default_nx() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialProfile {
    /// `1 + 0.1` times a centered bump, at rest.
    Bump,
    /// `rho = 1`, at rest.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: f64,
    pub cfl: f64,
    /// Stored snapshots after the initial one.
    pub samples: usize,
    pub periodic_x: bool,
    pub periodic_y: bool,
    pub subgrid_friction: bool,
    pub initial: InitialProfile,
    /// Radial shells of the corrector quadrature.
    pub shells: usize,
    /// Exponents of the corrector norm audit.
    pub qs: Vec<f64>,
    /// Exponents of the inverse-divergence audit.
    pub bog_qs: Vec<f64>,
    /// Seeded right-hand sides per inverse-divergence audit.
    pub rhs_count: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            t_end: 0.25,
            cfl: 0.4,
            samples: 25,
            periodic_x: false,
            periodic_y: false,
            subgrid_friction: true,
            initial: InitialProfile::Bump,
            shells: 64,
            qs: vec![1.0, 1.5, 2.0, 3.0],
            bog_qs: vec![1.5, 2.0],
            rhs_count: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub epsilons: Vec<f64>,
    pub mode: StudyMode,
    #[serde(default = "default_dict")]
    pub dictionary_centers: usize,
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write binary dumps of the final fields.
    pub field_dumps: bool,
}

fn default_nx() -> usize {
    128
}
fn default_dict() -> usize {
    3
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.geometry.nx < 2 {
            return Err(Error::InvalidConfig("geometry.nx must be at least 2".into()));
        }
        if let Some(p) = &self.geometry.perforation {
            p.validate()?;
        }
        self.fluid.validate()?;
        let s = &self.solver;
        if !(s.t_end >= 0.0 && s.cfl > 0.0 && s.samples > 0 && s.shells > 0) {
            return Err(Error::InvalidConfig("solver t_end, cfl, samples and shells must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::unit_square(self.geometry.nx)
    }

    pub fn boundary(&self) -> Boundary {
        Boundary { periodic_x: self.solver.periodic_x, periodic_y: self.solver.periodic_y }
    }

    /// Holes of the geometry section (empty without a perforation).
    pub fn holes(&self) -> Result<HoleSet> {
        match &self.geometry.perforation {
            Some(p) => generate_centers(p),
            None => Ok(HoleSet::empty(0.5, 1e-3, 2.0)),
        }
    }

    pub fn mask(&self, holes: &HoleSet) -> GridMask {
        if holes.count() == 0 {
            GridMask::all_fluid(self.grid())
        } else {
            rasterize(holes, self.geometry.nx)
        }
    }

    pub fn initial_data(&self) -> InitialData {
        match self.solver.initial {
            InitialProfile::Bump => InitialData::default_bump(self.grid()),
            InitialProfile::Uniform => InitialData::at_rest(CellField::from_fn(self.grid(), |_| 1.0)),
        }
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        let st = self.study.as_ref().ok_or_else(|| Error::InvalidConfig("missing study section".into()))?;
        let shape = self.geometry.perforation.as_ref().map(|p| p.shape.clone()).unwrap_or(crate::domain::HoleShape::Disk);
        Ok(StudyConfig {
            epsilons: st.epsilons.clone(),
            mode: st.mode.clone(),
            shape,
            fluid: self.fluid.clone(),
            nx: self.geometry.nx,
            t_end: self.solver.t_end,
            cfl: self.solver.cfl,
            samples: self.solver.samples,
            dictionary_centers: st.dictionary_centers,
            theta: st.theta,
            subgrid_friction: self.solver.subgrid_friction,
        })
    }
}
