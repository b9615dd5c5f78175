//! Scenario files: strict TOML with explicit seeds.

use std::path::{Path, PathBuf};

use ergobsde_core::bsde::{BsdeConfig, RegressionBasis, MAX_PROJECTION_DIM};
use ergobsde_core::control::CostConfig;
use ergobsde_core::ergodic::{ErgodicConfig, Extrapolation};
use ergobsde_core::forward::{Scheme, SimConfig};
use ergobsde_core::hamiltonian::DriverSpec;
use ergobsde_core::model::{build_boundary_control_model, ScalarFn, StateVector};
use ergobsde_core::scenarios::{self, Problem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub driver: DriverChoice,
    #[serde(default)]
    pub validate: ValidateSpec,
    pub solver: Option<SolverSpec>,
    pub simulate: Option<SimulateSpec>,
    pub hjb: Option<HjbSpec>,
    pub control: Option<ControlSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `dX = -a X dt + sigma dW`.
    Ou {
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    /// Reaction heat equation coupled to a controlled boundary-type process.
    Example2 {
        #[serde(default = "six")]
        n_modes: usize,
    },
    /// Heat equation on `(0, π)` controlled through its boundary value.
    Example1 {
        #[serde(default = "eight")]
        n_modes: usize,
        #[serde(default = "one")]
        d: f64,
        #[serde(default = "minus_one")]
        b_slope: f64,
        #[serde(default = "one")]
        sigma_base: f64,
        #[serde(default = "quarter")]
        sigma_amp: f64,
        #[serde(default = "one")]
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverChoice {
    /// `ψ ≡ c`.
    Constant { c: f64 },
    /// `ψ = cos(x_1)`.
    CosFirst,
    /// Closed-form Hamiltonian of the Example 2 control problem on a `Γ` grid.
    Example2 {
        #[serde(default = "grid_points")]
        n_controls: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default = "three")]
    pub degree: usize,
    /// Projected coordinates; defaults to the leading ones.
    pub coords: Option<Vec<usize>>,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "samples")]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self {
            sample_count: samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub stoch_conv_correction: bool,
    #[serde(default = "tail")]
    pub tail_tolerance: f64,
    #[serde(default = "horizon_cap")]
    pub horizon_cap: f64,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default = "schedule")]
    pub alpha_schedule: Vec<f64>,
    /// Defaults to the origin.
    pub x_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub eval_points: Vec<Vec<f64>>,
    #[serde(default)]
    pub extrapolation: Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub euler_maruyama: bool,
    #[serde(default = "yes")]
    pub stoch_conv_correction: bool,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    /// Second start of the coupled pair; defaults to `x0 + e_last`.
    pub x0_prime: Option<Vec<f64>>,
    #[serde(default)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbSpec {
    /// Horizons of the finite-horizon problems `v^T`.
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub t_pairs: Vec<[f64; 2]>,
    /// Points for the mild identity; defaults to the solver's reference point.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    /// Start of the long-time ratio; defaults to the solver's reference point.
    pub x: Option<Vec<f64>>,
    /// Horizon of the pathwise ergodic residual; skipped when absent.
    pub residual_horizon: Option<f64>,
    /// Bound on the per-step mean-square residual.
    #[serde(default = "residual_tolerance")]
    pub residual_tolerance: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "constants")]
    pub constant_policies: Vec<f64>,
    #[serde(default = "allowance")]
    pub allowance: f64,
    /// Horizon of the Girsanov cross-check; skipped when absent.
    pub girsanov_horizon: Option<f64>,
    #[serde(default = "half")]
    pub girsanov_gamma: f64,
    #[serde(default = "yes")]
    pub stoch_conv_correction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Relative paths resolve against the scenario file.
    pub dir: Option<PathBuf>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None }
    }
}

fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn quarter() -> f64 {
    0.25
}
fn half() -> f64 {
    0.5
}
fn six() -> usize {
    6
}
fn eight() -> usize {
    8
}
fn three() -> usize {
    3
}
fn residual_tolerance() -> f64 {
    1e-3
}
fn samples() -> usize {
    2000
}
fn grid_points() -> usize {
    2001
}
fn yes() -> bool {
    true
}
fn tail() -> f64 {
    1e-2
}
fn horizon_cap() -> f64 {
    5000.0
}
fn schedule() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05, 0.025]
}
fn constants() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}
fn allowance() -> f64 {
    0.02
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies `a.b.c=value`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl Scenario {
    /// Strict parse; unknown keys are reported with their full path.
    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let value = toml::Value::Table(table);
        let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Validation(format!("scenario key `{path}`: {}", e.into_inner()))
        })?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Validation("scenario name must be a plain non-empty word".into()));
        }
        if matches!(self.driver, DriverChoice::Example2 { .. }) && !matches!(self.model, ModelSpec::Example2 { .. }) {
            return Err(CliError::Validation(
                "driver `example2` needs model kind `example2`".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the effective scenario after overrides.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let mut problem = match &self.model {
            ModelSpec::Ou { a, sigma } => match self.driver {
                DriverChoice::Constant { c } => scenarios::constant_driver(c, *a, *sigma)?,
                _ => scenarios::ou_cos(*a, *sigma)?,
            },
            ModelSpec::Example2 { n_modes } => {
                let n_controls = match self.driver {
                    DriverChoice::Example2 { n_controls } => n_controls,
                    _ => 3,
                };
                scenarios::example2(*n_modes, n_controls)?
            }
            ModelSpec::Example1 {
                n_modes,
                d,
                b_slope,
                sigma_base,
                sigma_amp,
                rho,
            } => {
                let m = build_boundary_control_model(
                    *n_modes,
                    ScalarFn::constant(*d),
                    ScalarFn::linear(*b_slope, 0.0),
                    ScalarFn::tanh_modulated(*sigma_base, *sigma_amp),
                    ScalarFn::constant(*rho),
                )?;
                Problem {
                    driver: DriverSpec::cos_first(m.model.d1(), m.model.d2()),
                    model: m.model,
                    control: None,
                    field: Some(m.field),
                }
            }
        };
        let (d1, d2) = (problem.model.d1(), problem.model.d2());
        match self.driver {
            DriverChoice::Constant { c } if !matches!(self.model, ModelSpec::Ou { .. }) => {
                problem.driver = DriverSpec::constant(c, d1, d2);
                problem.control = None;
            }
            DriverChoice::CosFirst => {
                problem.driver = DriverSpec::cos_first(d1, d2);
                problem.control = None;
            }
            _ => {}
        }
        Ok(problem)
    }

    pub fn solver(&self) -> Result<&SolverSpec, CliError> {
        self.solver
            .as_ref()
            .ok_or_else(|| CliError::Validation("scenario has no [solver] section".into()))
    }

    pub fn output_dir(&self, scenario_path: &Path, cli_out: Option<&Path>) -> PathBuf {
        if let Some(d) = cli_out {
            return d.to_path_buf();
        }
        let base = scenario_path.parent().unwrap_or_else(|| Path::new("."));
        match &self.outputs.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => base.join(d),
            None => base.join("out").join(&self.name),
        }
    }
}

pub fn state(dim: usize, coords: Option<&Vec<f64>>, what: &str) -> Result<StateVector, CliError> {
    match coords {
        None => Ok(StateVector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(StateVector::new(v.clone())?),
        Some(v) => Err(CliError::Validation(format!(
            "{what} has {} coordinates, the model has {dim}",
            v.len()
        ))),
    }
}

impl SolverSpec {
    pub fn bsde(&self) -> BsdeConfig {
        BsdeConfig {
            horizon_cap: self.horizon_cap,
            ..BsdeConfig::new(self.dt, self.n_paths, self.seed)
                .with_correction(self.stoch_conv_correction)
                .with_tail_tolerance(self.tail_tolerance)
        }
    }

    pub fn ergodic(&self) -> ErgodicConfig {
        ErgodicConfig {
            bsde: self.bsde(),
            extrapolation: self.extrapolation,
            ..Default::default()
        }
    }

    pub fn basis(&self, dim: usize) -> Result<RegressionBasis, CliError> {
        let coords = self
            .basis
            .coords
            .clone()
            .unwrap_or_else(|| (0..dim.min(MAX_PROJECTION_DIM)).collect());
        let b = RegressionBasis::polynomial(coords, self.basis.degree)?;
        b.check_dim(dim)?;
        Ok(b)
    }
}

impl SimulateSpec {
    pub fn sim(&self) -> Result<SimConfig, CliError> {
        let scheme = if self.euler_maruyama {
            Scheme::EulerMaruyama
        } else {
            Scheme::ExponentialEuler
        };
        Ok(SimConfig::new(self.dt, self.horizon, self.n_paths, self.seed)?
            .with_scheme(scheme)
            .with_correction(self.stoch_conv_correction))
    }
}

impl ControlSpec {
    pub fn cost(&self) -> CostConfig {
        CostConfig {
            stoch_conv_correction: self.stoch_conv_correction,
            ..CostConfig::new(self.dt, self.horizon, self.burn_in, self.n_paths, self.seed)
        }
    }
}
