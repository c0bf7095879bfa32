use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irgnm::IrgnmConfig;
use crate::model::{Excitation, Face, MaterialSpec, ParameterBounds, SensorSpec};
use crate::tr::TrustRegionConfig;

/// Built-in experiment definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 2D plane-strain plate, 961 coefficients, 32 steps; minutes on one core.
    Desk2d,
    /// Small 3D thin plate with a free top layer.
    Desk3d,
    /// Full-size 3D plate; hours of compute.
    Paper3d,
}

impl Profile {
    pub fn source(self) -> &'static str {
        match self {
            Profile::Desk2d => include_str!("../../profiles/desk2d.toml"),
            Profile::Desk3d => include_str!("../../profiles/desk3d.toml"),
            Profile::Paper3d => include_str!("../../profiles/paper3d.toml"),
        }
    }

    pub fn config(self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(self.source())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub extents: Vec<[f64; 2]>,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub dirichlet: Vec<Face>,
    pub t_end: f64,
    pub steps: usize,
    #[serde(default = "half")]
    pub zeta: f64,
    pub material: MaterialSpec,
    pub sensors: SensorSpec,
    pub excitation: Excitation,
    #[serde(default)]
    pub bounds: ParameterBounds,
}

fn half() -> f64 {
    0.5
}

/// Axis-aligned box; a coefficient takes `value` if its hat-function support lies inside.
///
/// Along the free-layer axis the support always leaves the layer, so there the node
/// position itself must lie in `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleDefect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

/// Center coefficient set to `value`, its in-layer neighbors to the midpoint between
/// `value` and the background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointDefect {
    pub center: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub background: f64,
    pub rectangles: Vec<RectangleDefect>,
    pub points: Vec<PointDefect>,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self { background: 1.0, rectangles: Vec::new(), points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub relative: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { relative: 0.01, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub irgnm: IrgnmConfig,
    pub tr: TrustRegionConfig,
    /// Initial guess and regularization center, uniform.
    pub initial: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { irgnm: IrgnmConfig::default(), tr: TrustRegionConfig::default(), initial: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write reconstructed coefficient grids as text arrays.
    pub field_dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), field_dump: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        let dim = p.extents.len();
        if p.cells.len() != dim || p.material.parameter_coarsening.len() != dim {
            return Err(Error::Config("extents, cells and parameter_coarsening must agree in length".into()));
        }
        if p.steps == 0 || !(p.t_end > 0.0) {
            return Err(Error::Config("need steps >= 1 and t_end > 0".into()));
        }
        if !(self.noise.relative >= 0.0) {
            return Err(Error::Config("relative noise level must be nonnegative".into()));
        }
        for r in &self.truth.rectangles {
            if r.lower.len() != dim || r.upper.len() != dim {
                return Err(Error::Config("rectangle bounds need one entry per axis".into()));
            }
        }
        if self.truth.points.iter().any(|d| d.center.len() != dim) {
            return Err(Error::Config("point defect centers need one entry per axis".into()));
        }
        if !(self.solver.initial > 0.0) {
            return Err(Error::Config("initial coefficient must be positive".into()));
        }
        self.solver.irgnm.validate()?;
        self.solver.tr.validate()
    }
}
