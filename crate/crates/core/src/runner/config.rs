//! TOML ingestion for scenarios and experiments.
//!
//! A scenario file may omit any block except `[[users]]`; omitted blocks and
//! fields take the defaults of the default scenario (10 GHz server CPU,
//! 10 MHz bandwidth, g0 = -40 dB, path-loss exponent 2.8, 0.1 W transmit
//! power, the four-model catalog). The objective weights are not published
//! values; their defaults only balance the delay and accuracy terms.
//!
//! ```toml
//! [server]
//! f_ser = 10.0
//!
//! [[users]]
//! f_loc = 1.2
//! d = 35.0
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{Decision, Scenario, UserSpec};
use crate::oracle::Distribution;
use crate::qlearn::QConfig;
use crate::scalar::Scalar;

/// Transmit power of every user when a file does not set it (W).
pub const DEFAULT_POWER: f64 = 0.1;
/// Private dataset size when a file does not set it.
pub const DEFAULT_DATASET_SIZE: u64 = 500;

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn deserialize_named<D: DeserializeOwned>(table: Table, prefix: &str) -> Result<D> {
    serde_path_to_error::deserialize(table).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        Error::config(key, e.inner().message().trim().to_string())
    })
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::config(e.span().map_or("<document>".into(), |s| format!("byte {}", s.start)), e.message().trim().to_string()))
}

fn default_table<S: Serialize>(value: &S) -> Table {
    Table::try_from(value).expect("defaults serialise to a TOML table")
}

/// Scenario from an already-parsed table; see the module docs for the schema.
pub fn scenario_from_table<T: Scalar + Serialize + DeserializeOwned>(mut table: Table) -> Result<Scenario<T>> {
    let users = match table.remove("users") {
        Some(Value::Array(users)) => users,
        Some(_) => return Err(Error::config("users", "expected an array of [[users]] tables")),
        None => return Err(Error::config("users", "missing; at least one [[users]] entry is required")),
    };
    let mut merged = default_table(&Scenario::<T>::with_users(Vec::new()));
    merged.remove("users");
    merge(&mut merged, table);

    let mut out_users = Vec::with_capacity(users.len());
    for (i, u) in users.into_iter().enumerate() {
        let Value::Table(u) = u else {
            return Err(Error::config(format!("users[{i}]"), "expected a table"));
        };
        let mut base = Table::new();
        base.insert("id".into(), Value::Integer(i as i64));
        base.insert("p".into(), Value::Float(DEFAULT_POWER));
        base.insert("dataset_size".into(), Value::Integer(DEFAULT_DATASET_SIZE as i64));
        merge(&mut base, u);
        out_users.push(deserialize_named::<UserSpec<T>>(base, &format!("users[{i}]"))?);
    }
    merged.insert("users".into(), Value::Array(Vec::new()));
    let mut sc: Scenario<T> = deserialize_named(merged, "")?;
    sc.users = out_users;
    sc.validate()?;
    Ok(sc)
}

/// Parses and validates a scenario document.
pub fn load_scenario<T: Scalar + Serialize + DeserializeOwned>(text: &str) -> Result<Scenario<T>> {
    scenario_from_table(parse_table(text)?)
}

pub fn load_scenario_file<T: Scalar + Serialize + DeserializeOwned>(path: &Path) -> Result<Scenario<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_scenario(&text)
}

/// Canonical TOML form; `load_scenario` reads it back to an equal scenario.
pub fn scenario_to_toml<T: Scalar + Serialize>(sc: &Scenario<T>) -> Result<String> {
    toml::to_string(sc).map_err(|e| Error::config("scenario", e.to_string()))
}

/// Decision-making scheme compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Q-learning over offloading and model choice, convex resource split.
    Proposed,
    /// Q-learning over offloading, model and a resource grid.
    QOnly,
    /// Smallest-cost model for everyone, Q-learning over offloading.
    FlMin,
    /// Largest-cost model for everyone, Q-learning over offloading.
    FlMax,
    /// Enumeration of every offloading and model decision.
    Exhaustive,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Proposed, Scheme::QOnly, Scheme::FlMin, Scheme::FlMax, Scheme::Exhaustive];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::QOnly => "q-only",
            Scheme::FlMin => "fl-min",
            Scheme::FlMax => "fl-max",
            Scheme::Exhaustive => "exhaustive",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "method",
                    format!("unknown method `{s}` (expected proposed, q-only, fl-min, fl-max or exhaustive)"),
                )
            })
    }
}

/// Per-trial redraw of user positions and CPUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrawConfig {
    pub users: usize,
    /// Distance range (m).
    pub d_range: (f64, f64),
    /// Local CPU range (GHz).
    pub f_loc_range: (f64, f64),
    pub p: f64,
    pub dataset_size: u64,
}

impl Default for DrawConfig {
    fn default() -> Self {
        Self {
            users: 4,
            d_range: (10.0, 100.0),
            f_loc_range: (0.5, 2.0),
            p: DEFAULT_POWER,
            dataset_size: DEFAULT_DATASET_SIZE,
        }
    }
}

impl DrawConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && hi > lo;
        if self.users == 0 {
            return Err(Error::config("draw.users", "must be >= 1"));
        }
        if !ordered(self.d_range) {
            return Err(Error::config("draw.d_range", "must satisfy 0 < lo < hi"));
        }
        if !ordered(self.f_loc_range) {
            return Err(Error::config("draw.f_loc_range", "must satisfy 0 < lo < hi"));
        }
        if !(self.p > 0.0) {
            return Err(Error::config("draw.p", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QOnlyConfig {
    /// Uniform levels per resource over `(0, budget]`.
    pub levels: usize,
}

impl Default for QOnlyConfig {
    fn default() -> Self {
        Self { levels: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<Scheme>,
    pub trials: usize,
    pub seed: u64,
    pub distribution: Distribution,
    /// Output directory, relative to the working directory.
    pub out: PathBuf,
    /// Scenario file supplying everything but the drawn users.
    pub scenario_file: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec![Scheme::Proposed, Scheme::QOnly, Scheme::FlMin, Scheme::FlMax],
            trials: 200,
            seed: 0,
            distribution: Distribution::NonIid,
            out: PathBuf::from("out"),
            scenario_file: None,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub q: QConfig<f64>,
    pub q_only: QOnlyConfig,
    /// `None` keeps the scenario's own users in every trial.
    pub draw: Option<DrawConfig>,
    pub scenario: Scenario<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            q: default_experiment_q(),
            q_only: QOnlyConfig::default(),
            draw: Some(DrawConfig::default()),
            scenario: Scenario::with_users(Vec::new()),
        }
    }
}

/// Q settings used by experiments unless overridden.
pub fn default_experiment_q() -> QConfig<f64> {
    QConfig {
        episodes: 50_000,
        ..QConfig::default()
    }
}

const EXPERIMENT_KEYS: [&str; 6] = ["experiment", "q", "q_only", "draw", "scenario", "decision"];

fn take_section<D: DeserializeOwned + Serialize>(table: &mut Table, key: &str, default: D) -> Result<D> {
    match table.remove(key) {
        None => Ok(default),
        Some(Value::Table(t)) => {
            let mut base = default_table(&default);
            merge(&mut base, t);
            deserialize_named(base, key)
        }
        Some(_) => Err(Error::config(key, "expected a table")),
    }
}

fn check_keys(table: &Table) -> Result<()> {
    match table.keys().find(|k| !EXPERIMENT_KEYS.contains(&k.as_str())) {
        Some(k) => Err(Error::config(k.clone(), format!("unknown section (expected one of {EXPERIMENT_KEYS:?})"))),
        None => Ok(()),
    }
}

/// Parses an experiment document. Relative `scenario_file` paths resolve
/// against `base_dir`.
pub fn load_experiment(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut table = parse_table(text)?;
    check_keys(&table)?;
    let experiment: ExperimentSection = take_section(&mut table, "experiment", ExperimentSection::default())?;
    let q: QConfig<f64> = take_section(&mut table, "q", default_experiment_q())?;
    q.validate()?;
    let q_only: QOnlyConfig = take_section(&mut table, "q_only", QOnlyConfig::default())?;
    if q_only.levels == 0 {
        return Err(Error::config("q_only.levels", "must be >= 1"));
    }
    let draw = match table.remove("draw") {
        Some(Value::Boolean(false)) => None,
        Some(Value::Table(t)) => {
            let mut base = default_table(&DrawConfig::default());
            merge(&mut base, t);
            Some(deserialize_named::<DrawConfig>(base, "draw")?)
        }
        Some(_) => return Err(Error::config("draw", "expected a table or `false`")),
        None => Some(DrawConfig::default()),
    };
    if let Some(d) = &draw {
        d.validate()?;
    }

    let mut scenario_table = match (table.remove("scenario"), &experiment.scenario_file) {
        (Some(_), Some(_)) => {
            return Err(Error::config("scenario", "give either [scenario] or experiment.scenario_file, not both"));
        }
        (Some(Value::Table(t)), None) => t,
        (Some(_), None) => return Err(Error::config("scenario", "expected a table")),
        (None, Some(file)) => {
            let path = base_dir.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            parse_table(&text)?
        }
        (None, None) => Table::new(),
    };
    if draw.is_some() && !scenario_table.contains_key("users") {
        // placeholder users; every trial replaces them
        let mut user = Table::new();
        user.insert("f_loc".into(), Value::Float(1.0));
        user.insert("d".into(), Value::Float(10.0));
        scenario_table.insert("users".into(), Value::Array(vec![Value::Table(user)]));
    }
    let scenario = scenario_from_table(scenario_table)?;
    if experiment.trials == 0 {
        return Err(Error::config("experiment.trials", "must be >= 1"));
    }
    if experiment.methods.is_empty() {
        return Err(Error::config("experiment.methods", "at least one method is required"));
    }
    Ok(ExperimentConfig {
        experiment,
        q,
        q_only,
        draw,
        scenario,
    })
}

/// Fixed scenario plus an optional `[decision]` block, used by the one-shot
/// subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub scenario: Scenario<f64>,
    pub decision: Option<Decision>,
    pub q: QConfig<f64>,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBlock {
    /// `true` trains the student locally.
    local: Vec<bool>,
    model: Vec<usize>,
}

/// Reads a scenario document that may also carry `[decision]`, `[q]` and
/// `[experiment] distribution`. A `[scenario]` table, when present, holds
/// the scenario; otherwise the top level does.
pub fn load_problem(text: &str) -> Result<ProblemConfig> {
    let mut table = parse_table(text)?;
    let decision = match table.remove("decision") {
        None => None,
        Some(Value::Table(t)) => {
            let d: DecisionBlock = deserialize_named(t, "decision")?;
            Some(Decision { x: d.local, m: d.model })
        }
        Some(_) => return Err(Error::config("decision", "expected a table")),
    };
    let q: QConfig<f64> = take_section(&mut table, "q", QConfig::default())?;
    q.validate()?;
    let distribution = match table.remove("experiment") {
        None => Distribution::NonIid,
        Some(Value::Table(mut t)) => {
            let dist = t
                .remove("distribution")
                .map(|v| v.try_into::<Distribution>().map_err(|e| Error::config("experiment.distribution", e.message().to_string())))
                .transpose()?
                .unwrap_or(Distribution::NonIid);
            if let Some(k) = t.keys().next() {
                return Err(Error::config(format!("experiment.{k}"), "not used by this command"));
            }
            dist
        }
        Some(_) => return Err(Error::config("experiment", "expected a table")),
    };
    let scenario_table = match table.remove("scenario") {
        Some(Value::Table(t)) if table.is_empty() => t,
        Some(Value::Table(_)) => {
            let k = table.keys().next().cloned().unwrap_or_default();
            return Err(Error::config(k, "top-level scenario keys cannot be mixed with [scenario]"));
        }
        Some(_) => return Err(Error::config("scenario", "expected a table")),
        None => table,
    };
    let scenario = scenario_from_table(scenario_table)?;
    if let Some(d) = &decision {
        d.validate(&scenario)?;
    }
    Ok(ProblemConfig {
        scenario,
        decision,
        q,
        distribution,
    })
}
