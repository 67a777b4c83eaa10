use std::collections::BTreeSet;
use std::path::Path;

use gslab_core::comparison::{Route, ScenarioSpec, DEFAULT_PROBES, DEFAULT_SAFETY};
use gslab_core::domain::{build_grid, GridSpec};
use gslab_core::orlicz::{NFunction, NFunctionSpec};
use gslab_core::perturbation::{DensitySpec, CRITICAL_TOL};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SHIPPED: &str = include_str!("../scenarios/shipped.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}: field `{field}`: {message}")]
    Parse { origin: String, field: String, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckGroup {
    Orlicz,
    Form,
    Spectral,
    Comparison,
    Heat,
}

pub const ALL_GROUPS: [CheckGroup; 5] =
    [CheckGroup::Orlicz, CheckGroup::Form, CheckGroup::Spectral, CheckGroup::Comparison, CheckGroup::Heat];

fn all_groups() -> Vec<CheckGroup> {
    ALL_GROUPS.to_vec()
}
fn default_k_max() -> usize {
    16
}
fn default_safety() -> f64 {
    DEFAULT_SAFETY
}
fn default_probes() -> usize {
    DEFAULT_PROBES
}
fn default_critical_tol() -> f64 {
    CRITICAL_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridSpec,
    pub measure: DensitySpec,
    pub nfunction: NFunctionSpec,
    #[serde(default)]
    pub route: Route,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_safety")]
    pub c_s_safety: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_critical_tol")]
    pub critical_tol: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "all_groups")]
    pub checks: Vec<CheckGroup>,
}

impl ScenarioConfig {
    pub fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            grid: self.grid.clone(),
            measure: self.measure.clone(),
            nfunction: self.nfunction.clone(),
            route: self.route,
            k_max: self.k_max,
            c_s_safety: self.c_s_safety,
            probes: self.probes,
            critical_tol: self.critical_tol,
        }
    }

    pub fn wants(&self, g: CheckGroup) -> bool {
        self.checks.contains(&g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub scenarios: Vec<ScenarioConfig>,
}

pub fn parse(text: &str, origin: &str) -> Result<Config, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse(&text, &path.display().to_string())
}

pub fn shipped() -> Config {
    parse(SHIPPED, "shipped.json").expect("shipped scenarios are valid")
}

impl Config {
    /// Every check that needs no solve.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenarios.is_empty() {
            return Err(ConfigError::Invalid { field: "scenarios".into(), message: "no scenarios".into() });
        }
        let mut names = BTreeSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            let invalid = |field: &str, e: &dyn std::fmt::Display| ConfigError::Invalid {
                field: format!("scenarios[{i}].{field}"),
                message: e.to_string(),
            };
            if s.name.is_empty() {
                return Err(invalid("name", &"must not be empty"));
            }
            if !names.insert(s.name.as_str()) {
                return Err(invalid("name", &format!("duplicate name `{}`", s.name)));
            }
            if s.checks.is_empty() {
                return Err(invalid("checks", &"at least one check group is required"));
            }
            build_grid(&s.grid).map_err(|e| invalid("grid", &e))?;
            s.measure.validate().map_err(|e| invalid("measure", &e))?;
            if let DensitySpec::Table { values } = &s.measure {
                let n = build_grid(&s.grid).map_err(|e| invalid("grid", &e))?.len();
                if values.len() != n {
                    return Err(invalid("measure.values", &format!("expected {n} values, got {}", values.len())));
                }
            }
            NFunction::from_spec(&s.nfunction).map_err(|e| invalid("nfunction", &e))?;
            s.spec().validate().map_err(|e| invalid("", &e))?;
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.scenarios.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn select(&self, name: Option<&str>) -> Result<Vec<ScenarioConfig>, ConfigError> {
        match name {
            None => Ok(self.scenarios.clone()),
            Some(n) => self
                .scenarios
                .iter()
                .find(|s| s.name == n)
                .map(|s| vec![s.clone()])
                .ok_or_else(|| ConfigError::UnknownScenario(n.to_string())),
        }
    }
}
