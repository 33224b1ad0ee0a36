//! Fitting step multiplier means and unknown cycle counts to measured
//! before/after quality data.
//!
//! A calibration file holds one `[problem]` table and any number of
//! `[[records]]`:
//!
//! ```toml
//! [problem]
//! trajectories_per_eval = 1
//! restarts = 4
//! max_evaluations = 4000
//! seed = 3
//! constraints = ["MRF[2].shape <= MRF[3].shape"]
//!
//! [problem.parameters]
//! "MRF[3].shape" = [0.7, 0.95]
//!
//! [problem.cycles]
//! n_mrf = [8, 14]
//!
//! [[records]]
//! name = "mirror"
//! chain = "MRF*?n_mrf, SLS, Interferometry, CCP2*6, CCP3, SLS, Interferometry"
//! initial_shape_nm = 150.0
//! initial_roughness_nm = [2.8, 3.0]
//!
//! [[records.checkpoints]]
//! after = 2
//! shape_nm = 12.3
//! roughness_nm = [2.6, 2.8]
//! ```
//!
//! Parameter keys name the regime by any cycle it covers, so `MRF[3].shape`
//! is the shape multiplier mean of MRF's open-ended regime. Roughness keys
//! address the multiplier mean (or the base factor of a coupled update).

mod fit;
mod objective;
mod simplex;
mod trajectories;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fit::{calibrate, CalibrationResult, ComboRow};
pub use objective::{objective, Evaluation};
pub use simplex::{minimize_in_box, SimplexOptions, SimplexResult};
pub use trajectories::{generate_trajectories, synthesize_record, trajectories_csv, TrajPoint, Trajectory};

use crate::error::{Error, Result};
use crate::model::{Action, Metric, ProcessConfig, ProcessingStep, RoughnessUpdate};

/// One free multiplier mean: the regime of `step` covering `cycle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub step: ProcessingStep,
    pub cycle: u32,
    pub metric: Metric,
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let metric = match self.metric {
            Metric::Shape => "shape",
            Metric::Roughness => "roughness",
        };
        write!(f, "{}[{}].{metric}", self.step, self.cycle)
    }
}

impl FromStr for ParamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("problem.parameters.{s}"), "expected STEP[CYCLE].shape or STEP[CYCLE].roughness");
        let (head, metric) = s.trim().rsplit_once('.').ok_or_else(bad)?;
        let metric = match metric {
            "shape" => Metric::Shape,
            "roughness" => Metric::Roughness,
            _ => return Err(bad()),
        };
        let (step, cycle) = head.strip_suffix(']').and_then(|h| h.split_once('[')).ok_or_else(bad)?;
        let step: ProcessingStep = step.parse().map_err(|_| bad())?;
        let cycle: u32 = cycle.parse().map_err(|_| bad())?;
        if cycle == 0 {
            return Err(bad());
        }
        Ok(ParamKey { step, cycle, metric })
    }
}

impl ParamKey {
    /// Current mean in `model`.
    pub fn get(&self, model: &ProcessConfig) -> Result<f64> {
        let regime = model
            .step(self.step)?
            .regime(self.cycle)
            .ok_or_else(|| Error::config(self.to_string(), "no regime covers this cycle"))?;
        match self.metric {
            Metric::Shape => Ok(regime.shape.mean),
            Metric::Roughness => match regime.roughness {
                RoughnessUpdate::Multiply { mean, .. } => Ok(mean),
                RoughnessUpdate::Coupled { base } => Ok(base),
                RoughnessUpdate::Unchanged => {
                    Err(Error::config(self.to_string(), "this regime leaves roughness unchanged"))
                }
            },
        }
    }

    pub fn set(&self, model: &mut ProcessConfig, value: f64) -> Result<()> {
        let key = self.to_string();
        let regime = model
            .steps
            .get_mut(&self.step)
            .and_then(|s| s.regimes.iter_mut().find(|r| r.contains(self.cycle)))
            .ok_or_else(|| Error::config(&key, "no regime covers this cycle"))?;
        match (self.metric, &mut regime.roughness) {
            (Metric::Shape, _) => regime.shape.mean = value,
            (Metric::Roughness, RoughnessUpdate::Multiply { mean, .. }) => *mean = value,
            (Metric::Roughness, RoughnessUpdate::Coupled { base }) => *base = value,
            (Metric::Roughness, RoughnessUpdate::Unchanged) => {
                return Err(Error::config(key, "this regime leaves roughness unchanged"))
            }
        }
        Ok(())
    }
}

/// `lower <= upper`, both evaluated on the model with parameters applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub lower: ParamKey,
    pub upper: ParamKey,
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some((a, b)) = s.split_once("<=") {
            Ok(Constraint { lower: a.parse()?, upper: b.parse()? })
        } else if let Some((a, b)) = s.split_once(">=") {
            Ok(Constraint { lower: b.parse()?, upper: a.parse()? })
        } else {
            Err(Error::config("problem.constraints", format!("`{s}` is not of the form A <= B")))
        }
    }
}

impl Constraint {
    /// How far the constraint is violated; zero when satisfied.
    pub fn violation(&self, model: &ProcessConfig) -> Result<f64> {
        Ok((self.lower.get(model)? - self.upper.get(model)?).max(0.0))
    }
}

/// Multiplicity of one chain item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Count {
    Fixed(u32),
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainItem {
    pub action: Action,
    pub count: Count,
}

/// Parse `ACTION[*COUNT]` items separated by commas; `*?name` marks an
/// unknown multiplicity that the calibration sweeps over.
pub fn parse_chain(chain: &str) -> Result<Vec<ChainItem>> {
    let mut items = Vec::new();
    for item in chain.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = |m: &str| Error::InvalidSpec(format!("chain item `{item}`: {m}"));
        let (name, count) = match item.split_once('*') {
            None => (item, Count::Fixed(1)),
            Some((n, c)) => {
                let c = c.trim();
                let count = match c.strip_prefix('?') {
                    Some(var) if !var.is_empty() => Count::Unknown(var.to_string()),
                    Some(_) => return Err(bad("unknown count needs a name")),
                    None => Count::Fixed(c.parse().map_err(|_| bad("bad count"))?),
                };
                (n.trim(), count)
            }
        };
        let action: Action = name.parse().map_err(|e: crate::model::UnknownAction| bad(&e.to_string()))?;
        items.push(ChainItem { action, count });
    }
    if items.is_empty() {
        return Err(Error::InvalidSpec("empty chain".into()));
    }
    Ok(items)
}

/// Expand a chain into per-item action runs using `counts` for unknown multiplicities.
pub fn resolve_chain(items: &[ChainItem], counts: &BTreeMap<String, u32>) -> Result<Vec<(Action, u32)>> {
    items
        .iter()
        .map(|it| {
            let n = match &it.count {
                Count::Fixed(n) => *n,
                Count::Unknown(name) => *counts
                    .get(name)
                    .ok_or_else(|| Error::InvalidSpec(format!("no value for cycle count `{name}`")))?,
            };
            Ok((it.action, n))
        })
        .collect()
}

/// Measured quality after chain item `after` (0-based) has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub after: usize,
    #[serde(default)]
    pub shape_nm: Option<f64>,
    /// One value per roughness magnification; may be empty.
    #[serde(default)]
    pub roughness_nm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    #[serde(default)]
    pub name: String,
    pub chain: String,
    pub initial_shape_nm: f64,
    /// Initial roughness per magnification; its length fixes the channel count.
    pub initial_roughness_nm: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
}

impl CalibrationRecord {
    pub fn validate(&self) -> Result<Vec<ChainItem>> {
        let key = |s: &str| format!("records.{}.{s}", self.name);
        let items = parse_chain(&self.chain)?;
        if self.checkpoints.is_empty() {
            return Err(Error::config(key("checkpoints"), "at least one checkpoint required"));
        }
        if self.initial_roughness_nm.is_empty() {
            return Err(Error::config(key("initial_roughness_nm"), "at least one magnification required"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.initial_shape_nm) || !self.initial_roughness_nm.iter().all(|v| positive(*v)) {
            return Err(Error::config(key("initial"), "initial values must be positive"));
        }
        let mut last = None;
        for cp in &self.checkpoints {
            if cp.after >= items.len() {
                return Err(Error::config(key("checkpoints"), format!("position {} beyond the chain", cp.after)));
            }
            if last.is_some_and(|l| cp.after <= l) {
                return Err(Error::config(key("checkpoints"), "checkpoints must be strictly ordered"));
            }
            last = Some(cp.after);
            if cp.shape_nm.is_none() && cp.roughness_nm.is_empty() {
                return Err(Error::config(key("checkpoints"), "checkpoint without measurements"));
            }
            if !cp.roughness_nm.is_empty() && cp.roughness_nm.len() != self.initial_roughness_nm.len() {
                return Err(Error::config(key("checkpoints"), "one roughness value per magnification required"));
            }
            if !cp.shape_nm.is_none_or(positive) || !cp.roughness_nm.iter().all(|v| positive(*v)) {
                return Err(Error::config(key("checkpoints"), "measured values must be positive"));
            }
        }
        Ok(items)
    }
}

/// Free parameters, their box bounds and ordering constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProblem {
    /// Box bounds per multiplier-mean key.
    #[serde(default)]
    pub parameters: BTreeMap<String, [f64; 2]>,
    /// Inclusive search range per unknown cycle-count name.
    #[serde(default)]
    pub cycles: BTreeMap<String, [u32; 2]>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default = "one")]
    pub trajectories_per_eval: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_restarts() -> usize {
    4
}

fn default_max_evaluations() -> usize {
    4000
}

/// Parsed form of [`CalibrationProblem`].
#[derive(Debug, Clone)]
pub struct ParsedProblem {
    pub keys: Vec<ParamKey>,
    pub bounds: Vec<[f64; 2]>,
    pub constraints: Vec<Constraint>,
}

impl CalibrationProblem {
    pub fn parse(&self) -> Result<ParsedProblem> {
        let mut keys = Vec::new();
        let mut bounds = Vec::new();
        for (k, b) in &self.parameters {
            let key: ParamKey = k.parse()?;
            if !(b[0].is_finite() && b[1].is_finite() && b[0] <= b[1]) {
                return Err(Error::config(format!("problem.parameters.{k}"), "bounds must satisfy low <= high"));
            }
            keys.push(key);
            bounds.push(*b);
        }
        let constraints = self
            .constraints
            .iter()
            .map(|c| c.parse())
            .collect::<Result<Vec<Constraint>>>()?;
        if self.trajectories_per_eval == 0 {
            return Err(Error::config("problem.trajectories_per_eval", "must be >= 1"));
        }
        Ok(ParsedProblem { keys, bounds, constraints })
    }
}

/// A point in parameter space: continuous means plus integer cycle counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub means: BTreeMap<String, f64>,
    pub cycles: BTreeMap<String, u32>,
}

impl Params {
    /// A copy of `model` with the means applied.
    pub fn apply(&self, model: &ProcessConfig) -> Result<ProcessConfig> {
        let mut m = model.clone();
        for (k, v) in &self.means {
            k.parse::<ParamKey>()?.set(&mut m, *v)?;
        }
        Ok(m)
    }
}

/// Calibration input file: one problem plus its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub problem: CalibrationProblem,
    pub records: Vec<CalibrationRecord>,
}

impl CalibrationFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("calibration", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::Config { key: format!("{}: {key}", path.display()), message },
            other => other,
        })
    }
}
