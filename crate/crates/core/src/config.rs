//! Run configuration: one TOML file with `[model]`, `[initial]`, `[search]`,
//! `[search.binning]`, `[evaluate]`, `[output]` and `[serve]` sections.
//!
//! `[model]` starts from a preset (only `table1` exists) and overrides any
//! field given in the file; nested tables merge key by key, arrays replace.
//! `alpha`, `area_mm2` and both targets must always be stated explicitly.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::belief::{Binning, InitialBelief};
use crate::error::{Error, Result};
use crate::model::ProcessConfig;
use crate::pomcp::SearchConfig;

const SECTIONS: [&str; 6] = ["model", "initial", "search", "evaluate", "output", "serve"];
const REQUIRED_MODEL_KEYS: [&str; 4] = ["alpha", "area_mm2", "target_shape_nm", "target_roughness_nm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConfig {
    /// Root particle count.
    pub particles: usize,
    #[serde(flatten)]
    pub belief: InitialBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fixed chain to compare against, e.g. `MRF*13, Interferometry, SLS`.
    #[serde(default)]
    pub benchmark_chain: Option<String>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

fn default_states() -> usize {
    1000
}

fn default_resamples() -> usize {
    2000
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { n_states: default_states(), seed: 0, benchmark_chain: None, bootstrap_resamples: default_resamples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

impl OutputConfig {
    pub fn plan_json(&self) -> PathBuf {
        self.dir.join("plan.json")
    }
    pub fn plan_dot(&self) -> PathBuf {
        self.dir.join("plan.dot")
    }
    pub fn branches_csv(&self) -> PathBuf {
        self.dir.join("branches.csv")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Directory of UI assets served under `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { host: default_host(), port: default_port(), static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ProcessConfig,
    pub initial: InitialConfig,
    pub search: SearchConfig,
    pub evaluate: EvaluateConfig,
    pub output: OutputConfig,
    pub serve: ServeConfig,
}

/// Deserialize one section, naming missing or malformed keys by their full path.
fn section<T: DeserializeOwned>(value: Value, path: &str) -> Result<T> {
    T::deserialize(value).map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("missing field") || msg.starts_with("unknown field"))
            .map_or_else(|| path.to_string(), |k| format!("{path}.{k}"));
        Error::config(key, msg)
    })
}

fn take_table(root: &mut Table, key: &str, path: &str) -> Result<Option<Table>> {
    match root.remove(key) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::config(path, "expected a table")),
    }
}

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

fn model_section(mut user: Table) -> Result<ProcessConfig> {
    for k in REQUIRED_MODEL_KEYS {
        if !user.contains_key(k) {
            return Err(Error::config(format!("model.{k}"), "missing required key"));
        }
    }
    let preset = match user.remove("preset") {
        None => ProcessConfig::table1(),
        Some(Value::String(s)) if s == "table1" => ProcessConfig::table1(),
        Some(other) => return Err(Error::config("model.preset", format!("unknown preset {other}"))),
    };
    let mut base = Table::try_from(&preset).map_err(|e| Error::config("model", e.to_string()))?;
    for k in user.keys() {
        if !base.contains_key(k) {
            return Err(Error::config(format!("model.{k}"), "unknown key"));
        }
    }
    merge(&mut base, user);
    let model: ProcessConfig = section(Value::Table(base), "model")?;
    model.validate()?;
    Ok(model)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| Error::config("<file>", e.message()))?;
        if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown section"));
        }
        let model = model_section(take_table(&mut root, "model", "model")?.ok_or_else(|| Error::config("model", "missing section"))?)?;
        let initial: InitialConfig = section(
            Value::Table(take_table(&mut root, "initial", "initial")?.ok_or_else(|| Error::config("initial", "missing section"))?),
            "initial",
        )?;
        if initial.particles == 0 {
            return Err(Error::config("initial.particles", "must be >= 1"));
        }
        initial.belief.validate()?;

        let search_table = take_table(&mut root, "search", "search")?.ok_or_else(|| Error::config("search", "missing section"))?;
        // checked on its own first so that errors name the nested key
        let binning_table = search_table.get("binning").cloned().ok_or_else(|| Error::config("search.binning", "missing section"))?;
        section::<Binning>(binning_table, "search.binning")?;
        let search: SearchConfig = section(Value::Table(search_table), "search")?;
        search.validate(&model)?;

        let evaluate = match take_table(&mut root, "evaluate", "evaluate")? {
            Some(t) => section(Value::Table(t), "evaluate")?,
            None => EvaluateConfig::default(),
        };
        if evaluate.n_states == 0 {
            return Err(Error::config("evaluate.n_states", "must be >= 1"));
        }
        let output = match take_table(&mut root, "output", "output")? {
            Some(t) => section(Value::Table(t), "output")?,
            None => OutputConfig::default(),
        };
        let serve: ServeConfig = match take_table(&mut root, "serve", "serve")? {
            Some(t) => section(Value::Table(t), "serve")?,
            None => ServeConfig::default(),
        };
        if serve.port == 0 {
            return Err(Error::config("serve.port", "must be in 1..=65535"));
        }
        Ok(RunConfig { model, initial, search, evaluate, output, serve })
    }

    /// Load from `path`; a relative output or asset directory is resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::Config { key: format!("{}: {key}", path.display()), message },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        if let Some(d) = cfg.serve.static_dir.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }

    /// Check that the static asset directory, if configured, exists.
    pub fn check_serve_files(&self) -> Result<()> {
        match &self.serve.static_dir {
            Some(d) if !d.is_dir() => Err(Error::config("serve.static_dir", format!("{} is not a directory", d.display()))),
            _ => Ok(()),
        }
    }
}
