//! Scenario files.
//!
//! A scenario is a TOML document with one table per concern. Commands read
//! only the tables they need and report the first missing key by name.
//! A `manifest.json` written by an earlier run is accepted in place of the
//! TOML file; its `config` member holds the resolved scenario.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use qbridge_core::bridge::SolverOptions;
use qbridge_core::manufactured::{build_case, CaseTag, ManufacturedCase};
use qbridge_core::problem::{DensitySpec, GaussianBump};
use qbridge_core::verifier::{BridgeSetup, DEFAULT_REL_TOL};
use qbridge_core::{normalize_density, Grid, ScalarField, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: Option<GridConfig>,
    pub time: Option<TimeConfig>,
    pub problem: Option<ProblemConfig>,
    pub rho0: Option<DensityConfig>,
    pub rho1: Option<DensityConfig>,
    pub solver: Option<SolverConfig>,
    pub manufactured: Option<ManufacturedConfig>,
    pub ensemble: Option<EnsembleConfig>,
    pub refine: Option<RefineConfig>,
    pub verify: Option<VerifyConfig>,
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridConfig {
    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(Grid::new(&self.lower, &self.upper, &self.points)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl TimeConfig {
    pub fn time(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.t0, self.t1, self.steps)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub epsilon: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

/// Endpoint density: a catalog entry or a column of a grid CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Gaussian {
        mean: Vec<f64>,
        var: f64,
    },
    Mixture {
        components: Vec<GaussianBump>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "rho_column")]
        column: String,
    },
}

impl DensityConfig {
    /// The catalog form, if this is not a file.
    pub fn spec(&self) -> Option<DensitySpec> {
        match self {
            DensityConfig::Gaussian { mean, var } => Some(DensitySpec::Gaussian {
                mean: mean.clone(),
                var: *var,
            }),
            DensityConfig::Mixture { components } => Some(DensitySpec::Mixture {
                components: components.clone(),
            }),
            DensityConfig::Csv { .. } => None,
        }
    }

    pub fn evaluate(&self, grid: &Grid) -> Result<ScalarField, CliError> {
        match (self, self.spec()) {
            (_, Some(spec)) => Ok(spec.evaluate(grid)?),
            (DensityConfig::Csv { path, column }, None) => {
                let file = File::open(path).map_err(|e| {
                    CliError::Config(format!("cannot open density file {}: {e}", path.display()))
                })?;
                let rho = ScalarField::from_csv(*grid, BufReader::new(file), column)?;
                Ok(normalize_density(&rho)?)
            }
            _ => unreachable!("catalog densities always have a spec"),
        }
    }

    /// Make file paths absolute against the directory of the config file.
    fn resolve(&mut self, base: &Path) {
        if let DensityConfig::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "solver_tol")]
    pub tol: f64,
    #[serde(default = "max_iters")]
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: solver_tol(),
            max_iters: max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedConfig {
    /// Catalog tag: `constant`, `time_varying`, `state_noise`, `drifted`, or
    /// `i` to `iv`.
    pub case: String,
    #[serde(default = "case_points")]
    pub points: usize,
    #[serde(default = "case_steps")]
    pub steps: usize,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "cfl_target")]
    pub cfl_target: f64,
}

impl ManufacturedConfig {
    pub fn tag(&self) -> Result<CaseTag, CliError> {
        CaseTag::parse(&self.case).ok_or_else(|| {
            let names: Vec<_> = CaseTag::ALL.iter().map(|t| t.name()).collect();
            CliError::Config(format!(
                "unknown manufactured.case `{}`; expected one of {}",
                self.case,
                names.join(", ")
            ))
        })
    }

    pub fn case(&self) -> Result<ManufacturedCase, CliError> {
        Ok(build_case(self.tag()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record: bool,
    /// Largest accepted terminal L1 distance.
    #[serde(default = "ensemble_tol")]
    pub tol: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            particles: particles(),
            seed: 0,
            record: false,
            tol: ensemble_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Bridge,
    Manufactured,
    LogDensity,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub pipeline: PipelineKind,
    #[serde(default = "levels")]
    pub levels: Vec<usize>,
    /// Dimension of the `log_density` and `constant` pipelines.
    #[serde(default = "dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Relative tolerance of the single-grid residual checks.
    #[serde(default = "verify_tol")]
    pub tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { tol: verify_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

fn one() -> f64 {
    1.0
}
fn rho_column() -> String {
    "rho".into()
}
fn solver_tol() -> f64 {
    SolverOptions::default().tol
}
fn max_iters() -> usize {
    SolverOptions::default().max_iters
}
fn case_points() -> usize {
    256
}
fn case_steps() -> usize {
    200
}
fn cfl_target() -> f64 {
    0.9
}
fn particles() -> usize {
    100_000
}
fn ensemble_tol() -> f64 {
    0.05
}
fn levels() -> Vec<usize> {
    vec![256, 512, 1024]
}
fn dim() -> usize {
    1
}
fn verify_tol() -> f64 {
    DEFAULT_REL_TOL
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing config key `{key}`"))
}

impl Scenario {
    /// Read a TOML scenario, or the scenario stored in a run manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut scenario: Scenario = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let config = value
                .get("config")
                .cloned()
                .ok_or_else(|| missing("config"))?;
            serde_json::from_value(config)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for d in [&mut scenario.rho0, &mut scenario.rho1]
            .into_iter()
            .flatten()
        {
            d.resolve(base);
        }
        Ok(scenario)
    }

    pub fn grid(&self) -> Result<&GridConfig, CliError> {
        self.grid.as_ref().ok_or_else(|| missing("grid"))
    }

    pub fn time(&self) -> Result<&TimeConfig, CliError> {
        self.time.as_ref().ok_or_else(|| missing("time"))
    }

    pub fn problem(&self) -> Result<&ProblemConfig, CliError> {
        self.problem.as_ref().ok_or_else(|| missing("problem"))
    }

    pub fn rho0(&self) -> Result<&DensityConfig, CliError> {
        self.rho0.as_ref().ok_or_else(|| missing("rho0"))
    }

    pub fn rho1(&self) -> Result<&DensityConfig, CliError> {
        self.rho1.as_ref().ok_or_else(|| missing("rho1"))
    }

    pub fn manufactured(&self) -> Result<&ManufacturedConfig, CliError> {
        self.manufactured
            .as_ref()
            .ok_or_else(|| missing("manufactured"))
    }

    pub fn refine(&self) -> Result<&RefineConfig, CliError> {
        self.refine.as_ref().ok_or_else(|| missing("refine"))
    }

    /// Output directory from `--out`, else from `[output] dir`.
    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        match (flag, &self.output) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(o)) => Ok(o.dir.clone()),
            (None, None) => Err(missing("output.dir")),
        }
    }

    /// Bridge description for refinement; file densities are tied to one
    /// grid and cannot be refined.
    pub fn bridge_setup(&self) -> Result<BridgeSetup, CliError> {
        let grid = self.grid()?;
        let time = self.time()?;
        let problem = self.problem()?;
        let catalog = |d: &DensityConfig, key: &str| {
            d.spec().ok_or_else(|| {
                CliError::Config(format!("`{key}` must be a catalog density to be refined"))
            })
        };
        let solver = self.solver.clone().unwrap_or_default();
        Ok(BridgeSetup {
            lower: grid.lower.clone(),
            upper: grid.upper.clone(),
            t0: time.t0,
            t1: time.t1,
            rho0: catalog(self.rho0()?, "rho0")?,
            rho1: catalog(self.rho1()?, "rho1")?,
            epsilon: problem.epsilon,
            lambda: problem.lambda,
            solver: SolverOptions {
                tol: solver.tol,
                max_iters: solver.max_iters,
            },
            points: *grid.points.first().ok_or_else(|| missing("grid.points"))?,
            steps: time.steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
lower = [-5.0]
upper = [5.0]
points = [128]

[time]
t1 = 1.0
steps = 50

[problem]
epsilon = 0.5

[rho0]
kind = "gaussian"
mean = [-1.0]
var = 0.25

[rho1]
kind = "mixture"
components = [
    { weight = 1.0, mean = [0.8], var = 0.2 },
    { weight = 0.5, mean = [1.5], var = 0.1 },
]
"#;

    #[test]
    fn defaults_fill_optional_keys() {
        let s: Scenario = toml::from_str(MINIMAL).unwrap();
        assert_eq!(s.problem().unwrap().lambda, 1.0);
        assert_eq!(s.time().unwrap().t0, 0.0);
        assert!(s.solver.is_none());
        let setup = s.bridge_setup().unwrap();
        assert_eq!(setup.points, 128);
        assert_eq!(setup.solver, SolverOptions::default());
        assert!(s.output_dir(None).is_err());
    }

    #[test]
    fn missing_keys_are_named() {
        let text = MINIMAL.replace("epsilon = 0.5", "");
        let err = toml::from_str::<Scenario>(&text).unwrap_err().to_string();
        assert!(err.contains("epsilon"), "{err}");
        let s: Scenario = toml::from_str("[grid]\nlower=[0.0]\nupper=[1.0]\npoints=[9]").unwrap();
        assert!(s.time().unwrap_err().to_string().contains("`time`"));
    }

    #[test]
    fn unknown_case_lists_the_catalog() {
        let m = ManufacturedConfig {
            case: "v".into(),
            points: 1,
            steps: 1,
            horizon: 1.0,
            cfl_target: 0.9,
        };
        assert!(m.tag().unwrap_err().to_string().contains("state_noise"));
    }
}
