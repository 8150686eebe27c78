//! Run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` TOML file,
//! `--set section.key=value` / `--param key=value` overrides, dedicated flags.

use std::collections::BTreeMap;
use std::path::Path;

use robust_growth::pairs::{CtouParams, StochVolParams, TDistParams};
use robust_growth::sim::{InitialState, SimConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "ROBUST_GROWTH_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExampleChoice {
    Ctou,
    Tdist,
    Stochvol,
    /// A Gaussian model read from the `model` TOML file.
    Custom,
}

impl ExampleChoice {
    pub fn name(self) -> &'static str {
        match self {
            ExampleChoice::Ctou => "ctou",
            ExampleChoice::Tdist => "tdist",
            ExampleChoice::Stochvol => "stochvol",
            ExampleChoice::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Star,
    Hat,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Star => "star",
            Measure::Hat => "hat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub initial: InitialState,
    pub checkpoints: Vec<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self { t: c.t, dt: c.dt, n_paths: c.n_paths, initial: c.initial, checkpoints: c.checkpoints }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub measure: Measure,
    pub strategies: Vec<String>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { measure: Measure::Star, strategies: vec!["theta_star".into(), "theta_hat".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub count: usize,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self { count: 200 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    /// Constant added to b_Y; any nonzero value breaks compatibility.
    pub b_y_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Run the Monte-Carlo part of `ctou-report`.
    pub simulate: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { simulate: true }
    }
}

/// Fully resolved configuration; also the body of every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub example: ExampleChoice,
    pub seed: u64,
    /// Gaussian model file for `example = "custom"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub ctou: CtouParams,
    pub tdist: TDistParams,
    pub stochvol: StochVolParams,
    pub sim: SimSection,
    pub simulate: SimulateSection,
    pub suite: SuiteSection,
    pub check: CheckSection,
    pub report: ReportSection,
    /// Artifact checksums (manifests only; ignored on input).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            version: None,
            example: ExampleChoice::Ctou,
            seed: SimConfig::default().seed,
            model: None,
            ctou: CtouParams::default(),
            tdist: TDistParams::default(),
            stochvol: StochVolParams::default(),
            sim: SimSection::default(),
            simulate: SimulateSection::default(),
            suite: SuiteSection::default(),
            check: CheckSection::default(),
            report: ReportSection::default(),
            artifacts: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t: self.sim.t,
            dt: self.sim.dt,
            n_paths: self.sim.n_paths,
            seed: self.seed,
            initial: self.sim.initial.clone(),
            checkpoints: self.sim.checkpoints.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Recursively overlays `src` onto `dst`.
fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

/// Parses a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `path.to.key=value`.
pub fn apply_set(doc: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key '{path}' is malformed")));
    }
    let (last, parents) = keys.split_last().expect("non-empty");
    let mut table = doc;
    for k in parents {
        table = match table.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override key '{path}': '{k}' is not a section"))),
        };
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Defaults, then the file, then the overrides; `command` must match a manifest's.
pub fn load(file: Option<&Path>, command: &str, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut doc = Table::try_from(RunConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut table: Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(Value::String(c)) = table.get("command") {
            if c != command {
                return Err(CliError::Config(format!("{} was written by '{c}', not '{command}'", path.display())));
            }
        }
        table.remove("artifacts");
        table.remove("version");
        merge(&mut doc, table);
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    let mut cfg: RunConfig = Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.command = Some(command.to_string());
    cfg.version = Some(env!("CARGO_PKG_VERSION").to_string());
    Ok(cfg)
}
