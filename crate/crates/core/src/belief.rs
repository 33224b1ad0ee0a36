//! Particle approximation of the belief over hidden quality states.
//!
//! All particles are equally weighted. The cycle counters are deterministic and
//! therefore shared by every particle of a belief. A measurement never moves a
//! particle: it only partitions the set by the bin of each particle's simulated
//! reading, and the size of each part is the branch probability.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    self, Action, CycleCounters, MeasurementStep, Metric, ProcessConfig, ProcessingStep,
    QualityState,
};
use crate::sampling::positive_normal;

pub type Particle = QualityState;

/// Half-open interval `[low, high)` of a measured metric; `high = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationBin {
    pub metric: Metric,
    pub index: usize,
    pub low: f64,
    pub high: Option<f64>,
}

impl ObservationBin {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.low && self.high.is_none_or(|h| value < h)
    }

    /// True when the whole bin lies at or below `limit`.
    pub fn at_or_below(&self, limit: f64) -> bool {
        self.high.is_some_and(|h| h <= limit)
    }
}

impl fmt::Display for ObservationBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.high {
            Some(h) => write!(f, "{} in [{}, {})", self.metric, self.low, h),
            None => write!(f, "{} >= {}", self.metric, self.low),
        }
    }
}

/// User-defined discretisation of measurement readings, one edge list per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub shape_edges_nm: Vec<f64>,
    pub roughness_edges_nm: Vec<f64>,
}

impl Binning {
    /// Validated binning; each edge list must be strictly increasing and positive.
    pub fn new(shape_edges_nm: Vec<f64>, roughness_edges_nm: Vec<f64>) -> Result<Self> {
        let b = Self {
            shape_edges_nm,
            roughness_edges_nm,
        };
        for metric in [Metric::Shape, Metric::Roughness] {
            let edges = b.edges(metric);
            let key = format!("search.binning.{metric}_edges_nm");
            if edges.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(Error::config(key, "edges must be finite and positive"));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(key, "edges must be strictly increasing"));
            }
        }
        Ok(b)
    }

    /// Binning with exactly one edge per metric, at the targets.
    pub fn at_targets(config: &ProcessConfig) -> Self {
        Self {
            shape_edges_nm: vec![config.target_shape_nm],
            roughness_edges_nm: vec![config.target_roughness_nm],
        }
    }

    /// Require an edge at each target so "in target" is expressible as a bin.
    pub fn check_targets(&self, config: &ProcessConfig) -> Result<()> {
        for metric in [Metric::Shape, Metric::Roughness] {
            let target = config.target(metric);
            if !self.edges(metric).contains(&target) {
                return Err(Error::config(
                    format!("search.binning.{metric}_edges_nm"),
                    format!("must contain the target edge {target}"),
                ));
            }
        }
        Ok(())
    }

    pub fn edges(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Shape => &self.shape_edges_nm,
            Metric::Roughness => &self.roughness_edges_nm,
        }
    }

    pub fn bin_count(&self, metric: Metric) -> usize {
        self.edges(metric).len() + 1
    }

    pub fn bin(&self, metric: Metric, index: usize) -> ObservationBin {
        let edges = self.edges(metric);
        ObservationBin {
            metric,
            index,
            low: if index == 0 { 0.0 } else { edges[index - 1] },
            high: edges.get(index).copied(),
        }
    }
}

/// Bin whose `[low, high)` interval contains `value`.
pub fn bin_of(value: f64, binning: &Binning, metric: Metric) -> ObservationBin {
    let index = binning.edges(metric).partition_point(|e| *e <= value);
    binning.bin(metric, index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: Action,
    /// Present exactly when `action` is a measurement.
    pub observation: Option<ObservationBin>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History(pub Vec<HistoryEntry>);

impl History {
    pub fn entries(&self) -> &[HistoryEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn pushed(&self, entry: HistoryEntry) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(entry);
        History(v)
    }

    /// Measurements taken since the last processing step.
    pub fn since_last_processing(&self) -> &[HistoryEntry] {
        let start = self
            .0
            .iter()
            .rposition(|e| !e.action.is_measurement())
            .map_or(0, |i| i + 1);
        &self.0[start..]
    }

    /// Whether shape and roughness have each been observed entirely within
    /// target since the last processing step.
    pub fn confirmations(&self, config: &ProcessConfig) -> (bool, bool) {
        let mut shape = false;
        let mut roughness = false;
        for e in self.since_last_processing() {
            if let Some(bin) = e.observation {
                if bin.at_or_below(config.target(bin.metric)) {
                    match bin.metric {
                        Metric::Shape => shape = true,
                        Metric::Roughness => roughness = true,
                    }
                }
            }
        }
        (shape, roughness)
    }

    pub fn processing_counts(&self) -> CycleCounters {
        self.0
            .iter()
            .filter_map(|e| e.action.as_processing())
            .fold(CycleCounters::default(), |c, s| c.incremented(s))
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match e.observation {
                Some(bin) => write!(f, "{} -> {}", e.action, bin)?,
                None => write!(f, "{}", e.action)?,
            }
        }
        Ok(())
    }
}

/// How the root particles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialBelief {
    PointMass {
        shape_nm: f64,
        roughness_nm: f64,
    },
    /// Independent positive-truncated normals on both metrics.
    TruncatedNormal {
        shape_mean_nm: f64,
        shape_std_nm: f64,
        roughness_mean_nm: f64,
        roughness_std_nm: f64,
    },
}

impl InitialBelief {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialBelief::PointMass {
                shape_nm,
                roughness_nm,
            } => shape_nm > 0.0 && roughness_nm > 0.0,
            InitialBelief::TruncatedNormal {
                shape_mean_nm,
                shape_std_nm,
                roughness_mean_nm,
                roughness_std_nm,
            } => {
                shape_mean_nm > 0.0
                    && roughness_mean_nm > 0.0
                    && shape_std_nm >= 0.0
                    && roughness_std_nm >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("{self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QualityState {
        match *self {
            InitialBelief::PointMass {
                shape_nm,
                roughness_nm,
            } => QualityState::new(shape_nm, roughness_nm),
            InitialBelief::TruncatedNormal {
                shape_mean_nm,
                shape_std_nm,
                roughness_mean_nm,
                roughness_std_nm,
            } => QualityState::new(
                positive_normal(rng, shape_mean_nm, shape_std_nm),
                positive_normal(rng, roughness_mean_nm, roughness_std_nm),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    particles: Arc<Vec<Particle>>,
    pub counters: CycleCounters,
    pub history: History,
}

impl BeliefState {
    /// Belief from explicit particles, with an empty history.
    pub fn from_particles(particles: Vec<Particle>, counters: CycleCounters) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidSpec("a belief needs at least one particle".into()));
        }
        if let Some(p) = particles.iter().find(|p| !p.is_positive()) {
            return Err(Error::InvalidState(format!("non-positive particle {p:?}")));
        }
        Ok(Self {
            particles: Arc::new(particles),
            counters,
            history: History::default(),
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn all_in_target(&self, config: &ProcessConfig) -> bool {
        self.particles.iter().all(|p| model::in_target(p, config))
    }

    pub fn mean(&self) -> QualityState {
        let n = self.particles.len() as f64;
        let (f, s) = self
            .particles
            .iter()
            .fold((0.0, 0.0), |(f, s), p| (f + p.shape_f, s + p.roughness_sigma));
        QualityState::new(f / n, s / n)
    }
}

/// Sample `count` particles from `spec`; counters start at zero.
pub fn init_belief<R: Rng + ?Sized>(spec: &InitialBelief, count: usize, rng: &mut R) -> Result<BeliefState> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidSpec("particle count must be >= 1".into()));
    }
    let particles = (0..count).map(|_| spec.sample(rng)).collect();
    BeliefState::from_particles(particles, CycleCounters::default())
}

/// Apply a processing step to every particle.
pub fn propagate<R: Rng + ?Sized>(
    belief: &BeliefState,
    step: ProcessingStep,
    rng: &mut R,
    config: &ProcessConfig,
) -> Result<(BeliefState, f64)> {
    let duration = model::step_duration(step.into(), &belief.counters, config)?;
    config.check_legal(step.into(), &belief.counters)?;
    let mut particles = Vec::with_capacity(belief.len());
    for p in belief.particles.iter() {
        let (next, _, _) = model::transition(*p, belief.counters, step, rng, config)?;
        particles.push(next);
    }
    Ok((
        BeliefState {
            particles: Arc::new(particles),
            counters: belief.counters.incremented(step),
            history: belief.history.pushed(HistoryEntry {
                action: step.into(),
                observation: None,
            }),
        },
        duration,
    ))
}

#[derive(Debug, Clone)]
pub struct BeliefBranch {
    pub bin: ObservationBin,
    pub belief: BeliefState,
    /// Fraction of the parent's particles in this branch.
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementSplit {
    pub duration: f64,
    /// Non-empty bins in ascending bin order.
    pub branches: Vec<BeliefBranch>,
}

/// Draw one reading per particle and group particles by the bin of their reading.
pub fn split_by_measurement<R: Rng + ?Sized>(
    belief: &BeliefState,
    step: MeasurementStep,
    rng: &mut R,
    binning: &Binning,
    config: &ProcessConfig,
) -> Result<MeasurementSplit> {
    if belief.is_empty() {
        return Err(Error::InvalidSpec("cannot measure an empty belief".into()));
    }
    let action = Action::Measurement(step);
    config.check_legal(action, &belief.counters)?;
    let metric = step.metric();
    let mut groups: Vec<Vec<Particle>> = vec![Vec::new(); binning.bin_count(metric)];
    let mut duration = 0.0;
    for p in belief.particles.iter() {
        let (reading, d) = model::measure(p, step, rng, config)?;
        duration = d;
        groups[bin_of(reading, binning, metric).index].push(*p);
    }
    let total = belief.len() as f64;
    let branches = groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(index, particles)| {
            let bin = binning.bin(metric, index);
            let share = particles.len() as f64 / total;
            BeliefBranch {
                bin,
                share,
                belief: BeliefState {
                    particles: Arc::new(particles),
                    counters: belief.counters,
                    history: belief.history.pushed(HistoryEntry {
                        action,
                        observation: Some(bin),
                    }),
                },
            }
        })
        .collect();
    Ok(MeasurementSplit { duration, branches })
}
