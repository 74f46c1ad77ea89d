//! Scenario files: a TOML document describing one experiment.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{InitialLaw, Model};
use crate::environment::{Ar1Process, EnvPath, FundamentalsMap, RandomEnvSpec, SinusoidRates, SwitchingIntensities};
use crate::moments::MAX_ORDER;
use crate::polynomial::PolynomialTestFn;
use crate::simplex::{RateMatrix, SimplexPoint, TypeCounts};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Parse { line: usize, message: String },
    Validation { field: String, message: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            ConfigError::Validation { field, message } => write!(f, "invalid `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioModel {
    Mamwid,
    Mamwidams,
    /// MAMWID in a random environment.
    Mamwidare,
    /// MAMWIDAMS in a random environment.
    Mamwidmsare,
}

impl ScenarioModel {
    const NAMES: [&'static str; 4] = ["mamwid", "mamwidams", "mamwidare", "mamwidmsare"];

    pub fn chain_model(self) -> Model {
        match self {
            ScenarioModel::Mamwid | ScenarioModel::Mamwidare => Model::Mamwid,
            ScenarioModel::Mamwidams | ScenarioModel::Mamwidmsare => Model::Mamwidams,
        }
    }

    pub fn random_env(self) -> bool {
        matches!(self, ScenarioModel::Mamwidare | ScenarioModel::Mamwidmsare)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Constant {
        rates: Vec<Vec<f64>>,
    },
    Piecewise {
        breaks: Vec<f64>,
        values: Vec<Vec<Vec<f64>>>,
        horizon: f64,
    },
    Sinusoid {
        base: Vec<Vec<f64>>,
        amplitude: Vec<Vec<f64>>,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    MarkovSwitch {
        states: Vec<Vec<Vec<f64>>>,
        switching: Vec<Vec<f64>>,
        initial_law: Vec<f64>,
    },
    Fundamentals {
        phi: f64,
        sigma: f64,
        h0: f64,
        steps_per_unit: usize,
        offset: Vec<Vec<f64>>,
        weight: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Point { x0: Vec<f64> },
    Dirichlet { alpha: Vec<f64> },
    Counts { counts: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSteps {
    #[serde(default = "default_step")]
    pub h: f64,
    #[serde(default = "default_step")]
    pub dt: f64,
}

impl Default for SolverSteps {
    fn default() -> Self {
        Self {
            h: default_step(),
            dt: default_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Test function; `x_1²` when empty.
    #[serde(default)]
    pub f: Vec<Term>,
    #[serde(default = "default_density")]
    pub density: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            f: Vec::new(),
            density: default_density(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealedSpec {
    #[serde(default = "default_env_draws")]
    pub env_draws: usize,
    #[serde(default = "default_chains_per_env")]
    pub chains_per_env: usize,
}

impl Default for AnnealedSpec {
    fn default() -> Self {
        Self {
            env_draws: default_env_draws(),
            chains_per_env: default_chains_per_env(),
        }
    }
}

fn default_step() -> f64 {
    1e-3
}
fn default_density() -> u64 {
    8
}
fn default_env_draws() -> usize {
    200
}
fn default_chains_per_env() -> usize {
    50
}
fn default_replicates() -> usize {
    100
}
fn default_n_max() -> usize {
    crate::moments::DEFAULT_ORDER
}
fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ScenarioModel,
    pub r: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u64>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub solver: SolverSteps,
    pub environment: EnvSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub annealed: AnnealedSpec,
}

/// Deterministic environment or the law of a random one.
#[derive(Debug, Clone)]
pub enum Environment {
    Fixed(EnvPath),
    Random(RandomEnvSpec),
}

fn matrix(field: &str, rows: &[Vec<f64>], r: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != r) {
        return Err(invalid(field, format!("expected a {r}x{r} matrix")));
    }
    Ok(DMatrix::from_fn(r, r, |i, j| rows[i][j]))
}

fn rate_matrix(field: &str, rows: &[Vec<f64>], r: usize) -> Result<RateMatrix, ConfigError> {
    matrix(field, rows, r)?;
    RateMatrix::from_rows(rows).map_err(|e| invalid(field, e.to_string()))
}

impl Scenario {
    /// Population sizes of the run: `N_list` when given, else `[N]`.
    pub fn populations(&self) -> Vec<u64> {
        match (&self.n_list, self.n) {
            (Some(list), _) => list.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        }
    }

    /// Population for single-N subcommands: `N`, else the largest of `N_list`.
    pub fn population(&self) -> u64 {
        self.n
            .or_else(|| self.n_list.as_ref().and_then(|l| l.last().copied()))
            .unwrap_or(0)
    }

    pub fn environment(&self) -> Result<Environment, ConfigError> {
        let r = self.r;
        let field = "environment";
        Ok(match &self.environment {
            EnvSpec::Constant { rates } => {
                Environment::Fixed(EnvPath::constant(rate_matrix("environment.rates", rates, r)?))
            }
            EnvSpec::Piecewise {
                breaks,
                values,
                horizon,
            } => {
                let values = values
                    .iter()
                    .map(|v| rate_matrix("environment.values", v, r))
                    .collect::<Result<Vec<_>, _>>()?;
                Environment::Fixed(
                    EnvPath::piecewise(breaks.clone(), values, *horizon).map_err(|e| invalid(field, e.to_string()))?,
                )
            }
            EnvSpec::Sinusoid {
                base,
                amplitude,
                omega,
                phase,
            } => {
                let rates = SinusoidRates::new(
                    matrix("environment.base", base, r)?,
                    matrix("environment.amplitude", amplitude, r)?,
                    *omega,
                    *phase,
                )
                .map_err(|e| invalid(field, e.to_string()))?;
                Environment::Fixed(EnvPath::sinusoid(rates))
            }
            EnvSpec::MarkovSwitch {
                states,
                switching,
                initial_law,
            } => {
                let states = states
                    .iter()
                    .map(|v| rate_matrix("environment.states", v, r))
                    .collect::<Result<Vec<_>, _>>()?;
                let k = states.len();
                if switching.len() != k || switching.iter().any(|row| row.len() != k) {
                    return Err(invalid("environment.switching", format!("expected a {k}x{k} matrix")));
                }
                let q = SwitchingIntensities::new(DMatrix::from_fn(k, k, |i, j| switching[i][j]))
                    .map_err(|e| invalid("environment.switching", e.to_string()))?;
                Environment::Random(
                    RandomEnvSpec::markov_switch(states, q, initial_law.clone())
                        .map_err(|e| invalid(field, e.to_string()))?,
                )
            }
            EnvSpec::Fundamentals {
                phi,
                sigma,
                h0,
                steps_per_unit,
                offset,
                weight,
            } => {
                let map = FundamentalsMap::new(
                    matrix("environment.offset", offset, r)?,
                    matrix("environment.weight", weight, r)?,
                )
                .map_err(|e| invalid(field, e.to_string()))?;
                let process = Ar1Process {
                    phi: *phi,
                    sigma: *sigma,
                    h0: *h0,
                    steps_per_unit: *steps_per_unit,
                };
                Environment::Random(
                    RandomEnvSpec::fundamentals(process, map).map_err(|e| invalid(field, e.to_string()))?,
                )
            }
        })
    }

    pub fn initial_law(&self) -> Result<InitialLaw, ConfigError> {
        let r = self.r;
        let law = match &self.initial {
            InitialSpec::Point { x0 } => {
                InitialLaw::Point(SimplexPoint::new(x0.clone()).map_err(|e| invalid("initial.x0", e.to_string()))?)
            }
            InitialSpec::Dirichlet { alpha } => {
                if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                    return Err(invalid("initial.alpha", "Dirichlet parameters must be positive"));
                }
                InitialLaw::Dirichlet(alpha.clone())
            }
            InitialSpec::Counts { counts } => InitialLaw::Counts(
                TypeCounts::new(counts.clone()).map_err(|e| invalid("initial.counts", e.to_string()))?,
            ),
        };
        if law.dim() != r {
            return Err(invalid("initial", format!("expected {r} types, got {}", law.dim())));
        }
        Ok(law)
    }

    pub fn test_function(&self) -> Result<PolynomialTestFn, ConfigError> {
        let f = if self.generator.f.is_empty() {
            let mut e = vec![0; self.r];
            e[0] = 2;
            PolynomialTestFn::monomial(e)
        } else {
            PolynomialTestFn::new(
                self.r,
                self.generator.f.iter().map(|t| (t.exponents.clone(), t.coef)).collect(),
            )
        };
        f.map_err(|e| invalid("generator.f", e.to_string()))
    }

    /// Largest `N_min` over the (support of the) environment; `None` when
    /// rates are unbounded.
    fn n_min(env: &Environment) -> Option<usize> {
        match env {
            Environment::Fixed(path) => Some(path.n_min()),
            Environment::Random(RandomEnvSpec::MarkovSwitch { states, .. }) => {
                states.iter().map(RateMatrix::n_min).max()
            }
            Environment::Random(RandomEnvSpec::Fundamentals { .. }) => None,
        }
    }

    /// Cross-field checks; everything the subcommands later assume.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.r < 2 {
            return Err(invalid("r", "need at least 2 types"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("T", "horizon must be positive and finite"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must be at most 2^63 - 1"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be positive"));
        }
        if !(1..=MAX_ORDER).contains(&self.n_max) {
            return Err(invalid("n_max", format!("must be in 1..={MAX_ORDER}")));
        }
        for (field, v) in [("solver.h", self.solver.h), ("solver.dt", self.solver.dt)] {
            if !(v > 0.0 && v <= self.t_end) {
                return Err(invalid(field, "step must be positive and at most T"));
            }
        }
        if self.n.is_none() && self.n_list.is_none() {
            return Err(invalid("N", "either N or N_list is required"));
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() || list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("N_list", "must be non-empty and strictly increasing"));
            }
        }
        let env = self.environment()?;
        match (&env, self.model.random_env()) {
            (Environment::Fixed(_), true) => {
                return Err(invalid("model", "random-environment model needs a random environment"))
            }
            (Environment::Random(_), false) => {
                return Err(invalid(
                    "model",
                    "a random environment needs model mamwidare or mamwidmsare",
                ))
            }
            _ => {}
        }
        if let Environment::Fixed(path) = &env {
            if path.horizon() < self.t_end {
                return Err(invalid(
                    "T",
                    format!("environment only defined up to {}", path.horizon()),
                ));
            }
        }
        let n_min = Self::n_min(&env).unwrap_or(1).max(2) as u64;
        for n in self.populations() {
            if n < n_min {
                let field = if self.n_list.is_some() { "N_list" } else { "N" };
                return Err(invalid(field, "population too small for stochastic P"));
            }
        }
        let law = self.initial_law()?;
        if let InitialLaw::Counts(c) = &law {
            if self.populations().iter().any(|&n| n != c.population()) {
                return Err(invalid("initial.counts", "counts must sum to N"));
            }
        }
        if self.generator.density == 0 {
            return Err(invalid("generator.density", "must be positive"));
        }
        self.test_function()?;
        if self.annealed.env_draws < 2 || self.annealed.chains_per_env == 0 {
            return Err(invalid("annealed", "need env_draws >= 2 and chains_per_env >= 1"));
        }
        Ok(())
    }

    /// Canonical TOML text of the scenario.
    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    match table.get("model") {
        Some(toml::Value::String(s)) if ScenarioModel::NAMES.contains(&s.as_str()) => {}
        Some(v) => {
            return Err(invalid(
                "model",
                format!("unknown model {v}; expected one of {}", ScenarioModel::NAMES.join(", ")),
            ))
        }
        None => return Err(invalid("model", "missing")),
    }
    let scenario: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_scenario(&text)
}
