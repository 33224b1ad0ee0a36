use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, CycleCounters, MeasurementStep, Metric, ProcessingStep};
use crate::error::{Error, Result};

/// Reset draws further than this many standard deviations below their mean
/// are treated as impossible by [`ProcessConfig::roughness_reachable`].
pub const RESET_TAIL_SIGMAS: f64 = 6.0;

/// Normal multiplier `N(mean, std_scale * alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub mean: f64,
    pub std_scale: f64,
}

impl Multiplier {
    pub const fn new(mean: f64, std_scale: f64) -> Self {
        Self { mean, std_scale }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoughnessUpdate {
    Unchanged,
    Multiply { mean: f64, std_scale: f64 },
    /// `sigma * (base - g(alpha, delta_f, f, sigma))`, the MRF row.
    Coupled { base: f64 },
}

/// `setup_min + per_area_min * A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub setup_min: f64,
    pub per_area_min: f64,
}

impl DurationModel {
    pub fn minutes(&self, area_mm2: f64) -> f64 {
        self.setup_min + self.per_area_min * area_mm2
    }
}

/// Behaviour of a processing step over an inclusive range of cycle numbers
/// (1-based). `last_cycle = None` means open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub first_cycle: u32,
    pub last_cycle: Option<u32>,
    pub shape: Multiplier,
    pub roughness: RoughnessUpdate,
    pub duration: DurationModel,
}

impl Regime {
    pub fn contains(&self, cycle: u32) -> bool {
        cycle >= self.first_cycle && self.last_cycle.is_none_or(|last| cycle <= last)
    }
}

/// Replacement distribution applied when the post-step roughness falls below `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reset {
    pub bound: f64,
    pub mean: f64,
    pub std_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepModel {
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub reset: Option<Reset>,
    #[serde(default)]
    pub max_cycles: Option<u32>,
}

impl StepModel {
    pub fn regime(&self, cycle: u32) -> Option<&Regime> {
        self.regimes.iter().find(|r| r.contains(cycle))
    }

    fn validate(&self, name: &str) -> Result<()> {
        let key = |s: &str| format!("model.steps.{name}.{s}");
        if self.regimes.is_empty() {
            return Err(Error::config(key("regimes"), "at least one regime required"));
        }
        let mut expected = 1;
        for (i, r) in self.regimes.iter().enumerate() {
            if r.first_cycle != expected {
                return Err(Error::config(
                    key("regimes"),
                    format!("regime {i} starts at cycle {}, expected {expected}", r.first_cycle),
                ));
            }
            let is_last = i + 1 == self.regimes.len();
            match r.last_cycle {
                Some(last) if last < r.first_cycle => {
                    return Err(Error::config(key("regimes"), format!("regime {i} is empty")));
                }
                Some(last) => expected = last + 1,
                None if !is_last => {
                    return Err(Error::config(
                        key("regimes"),
                        format!("open-ended regime {i} must be the last one"),
                    ));
                }
                None => {}
            }
            if is_last {
                if let Some(last) = r.last_cycle {
                    if self.max_cycles.is_none_or(|m| m > last) {
                        return Err(Error::config(
                            key("regimes"),
                            "regimes do not cover every allowed cycle",
                        ));
                    }
                }
            }
            let stds_ok = r.shape.std_scale >= 0.0
                && match r.roughness {
                    RoughnessUpdate::Multiply { std_scale, .. } => std_scale >= 0.0,
                    _ => true,
                };
            if !stds_ok {
                return Err(Error::config(key("regimes"), "std scales must be >= 0"));
            }
            if r.duration.setup_min < 0.0 || r.duration.per_area_min < 0.0 {
                return Err(Error::config(key("regimes"), "duration coefficients must be >= 0"));
            }
        }
        if let Some(reset) = self.reset {
            if reset.std_scale < 0.0 || reset.bound <= 0.0 || reset.mean <= 0.0 {
                return Err(Error::config(key("reset"), "reset needs bound, mean > 0 and std >= 0"));
            }
        }
        Ok(())
    }
}

/// Which argument the overhead function `h` receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverheadArg {
    Area,
    SqrtArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub metric: Metric,
    pub std_scale: f64,
    pub duration: DurationModel,
    pub overhead_arg: OverheadArg,
}

/// `constant + slope * x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub slope: f64,
}

impl Affine {
    pub fn eval(&self, x: f64) -> f64 {
        self.constant + self.slope * x
    }
}

/// The MRF roughness coupling `g(alpha, delta_f, f, sigma)`, linear in its
/// arguments. All-zero by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoughnessCoupling {
    pub constant: f64,
    pub alpha: f64,
    pub delta_f: f64,
    pub shape: f64,
    pub roughness: f64,
}

impl RoughnessCoupling {
    pub fn eval(&self, alpha: f64, delta_f: f64, shape_f: f64, sigma: f64) -> f64 {
        self.constant
            + self.alpha * alpha
            + self.delta_f * delta_f
            + self.shape * shape_f
            + self.roughness * sigma
    }
}

/// All parameters of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    /// Global scaling of every standard deviation.
    pub alpha: f64,
    pub area_mm2: f64,
    pub target_shape_nm: f64,
    pub target_roughness_nm: f64,
    pub steps: BTreeMap<ProcessingStep, StepModel>,
    pub measurements: BTreeMap<MeasurementStep, MeasurementModel>,
    pub mrf_coupling: RoughnessCoupling,
    /// Measurement overheads `h_1..h_4`, keyed by measurement.
    pub overheads: BTreeMap<MeasurementStep, Affine>,
    pub reward_time_scale_min: f64,
    pub rng_seed: u64,
    /// Actions the planner and heuristics may use, in enumeration order.
    pub actions: Vec<Action>,
    /// Whether reaching the goal also needs confirming shape and roughness
    /// measurements after the last processing step.
    pub terminal_requires_measurements: bool,
}

const REF_AREA: f64 = 7850.0;

fn regime(
    first: u32,
    last: Option<u32>,
    shape: Multiplier,
    roughness: RoughnessUpdate,
    setup: f64,
    area_minutes: f64,
) -> Regime {
    Regime {
        first_cycle: first,
        last_cycle: last,
        shape,
        roughness,
        duration: DurationModel {
            setup_min: setup,
            per_area_min: area_minutes / REF_AREA,
        },
    }
}

fn table1_steps() -> BTreeMap<ProcessingStep, StepModel> {
    use RoughnessUpdate::*;
    let mut steps = BTreeMap::new();
    steps.insert(
        ProcessingStep::Ccp1,
        StepModel {
            regimes: vec![
                regime(1, Some(1), Multiplier::new(0.9, 0.01), Unchanged, 120.0, 540.0),
                regime(2, Some(5), Multiplier::new(0.925, 0.01), Unchanged, 0.0, 540.0),
                regime(6, None, Multiplier::new(0.95, 0.01), Unchanged, 0.0, 540.0),
            ],
            reset: None,
            max_cycles: None,
        },
    );
    steps.insert(
        ProcessingStep::Ccp2,
        StepModel {
            regimes: vec![
                regime(
                    1,
                    Some(1),
                    Multiplier::new(1.03, 0.1),
                    Multiply { mean: 0.61, std_scale: 0.03 },
                    120.0,
                    480.0,
                ),
                regime(
                    2,
                    None,
                    Multiplier::new(1.03, 0.1),
                    Multiply { mean: 0.88, std_scale: 0.03 },
                    0.0,
                    480.0,
                ),
            ],
            reset: Some(Reset { bound: 0.6, mean: 0.6, std_scale: 0.03 }),
            max_cycles: None,
        },
    );
    steps.insert(
        ProcessingStep::Ccp3,
        StepModel {
            regimes: vec![regime(
                1,
                Some(1),
                Multiplier::new(1.05, 0.05),
                Multiply { mean: 0.75, std_scale: 0.03 },
                120.0,
                480.0,
            )],
            reset: Some(Reset { bound: 0.1, mean: 0.1, std_scale: 0.005 }),
            max_cycles: Some(1),
        },
    );
    steps.insert(
        ProcessingStep::Mrf,
        StepModel {
            regimes: vec![
                regime(1, Some(1), Multiplier::new(0.6, 0.01), Coupled { base: 0.995 }, 120.0, 480.0),
                regime(2, Some(2), Multiplier::new(0.74, 0.01), Coupled { base: 0.995 }, 0.0, 240.0),
                regime(3, None, Multiplier::new(0.81, 0.01), Coupled { base: 0.995 }, 0.0, 300.0),
            ],
            reset: Some(Reset { bound: 2.0, mean: 2.0, std_scale: 0.01 }),
            max_cycles: None,
        },
    );
    steps
}

fn table1_measurements() -> BTreeMap<MeasurementStep, MeasurementModel> {
    let m = |metric, std_scale, setup_min, per_area_min, overhead_arg| MeasurementModel {
        metric,
        std_scale,
        duration: DurationModel { setup_min, per_area_min },
        overhead_arg,
    };
    BTreeMap::from([
        (MeasurementStep::Sls, m(Metric::Roughness, 0.05, 0.0, 0.0, OverheadArg::Area)),
        (
            MeasurementStep::Deflectometry,
            m(Metric::Shape, 0.1, 120.0, 1.0 / 200.0, OverheadArg::SqrtArea),
        ),
        (
            MeasurementStep::Interferometry,
            m(Metric::Shape, 0.15, 120.0 + 150.0 + 7.5, 0.0, OverheadArg::SqrtArea),
        ),
        (
            MeasurementStep::Profilometry,
            m(Metric::Shape, 0.2, 120.0, 0.024, OverheadArg::SqrtArea),
        ),
    ])
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self::table1()
    }
}

impl ProcessConfig {
    /// The documented step table with `alpha = 1`, `A = 7850 mm²`, targets
    /// 13 nm / 0.5 nm and every `g`, `h` identically zero.
    pub fn table1() -> Self {
        Self {
            alpha: 1.0,
            area_mm2: REF_AREA,
            target_shape_nm: 13.0,
            target_roughness_nm: 0.5,
            steps: table1_steps(),
            measurements: table1_measurements(),
            mrf_coupling: RoughnessCoupling::default(),
            overheads: MeasurementStep::ALL
                .iter()
                .map(|m| (*m, Affine::default()))
                .collect(),
            reward_time_scale_min: 1000.0,
            rng_seed: 0,
            actions: Action::ALL.to_vec(),
            terminal_requires_measurements: true,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Restrict the usable actions (kept in enumeration order).
    pub fn with_actions(mut self, actions: &[Action]) -> Self {
        self.actions = Action::ALL
            .iter()
            .copied()
            .filter(|a| actions.contains(a))
            .collect();
        self
    }

    pub fn step(&self, step: ProcessingStep) -> Result<&StepModel> {
        self.steps
            .get(&step)
            .ok_or_else(|| Error::config(format!("model.steps.{step}"), "missing step model"))
    }

    pub fn measurement(&self, step: MeasurementStep) -> Result<&MeasurementModel> {
        self.measurements.get(&step).ok_or_else(|| {
            Error::config(format!("model.measurements.{step}"), "missing measurement model")
        })
    }

    pub fn overhead(&self, step: MeasurementStep) -> Affine {
        self.overheads.get(&step).copied().unwrap_or_default()
    }

    pub fn target(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Shape => self.target_shape_nm,
            Metric::Roughness => self.target_roughness_nm,
        }
    }

    pub fn is_enabled(&self, action: Action) -> bool {
        self.actions.contains(&action)
    }

    /// Error unless `action` is enabled and its cycle limit not yet reached.
    pub fn check_legal(&self, action: Action, counters: &CycleCounters) -> Result<()> {
        if !self.is_enabled(action) {
            return Err(Error::IllegalAction {
                action,
                reason: "action is disabled in this model".into(),
            });
        }
        if let Action::Processing(step) = action {
            let model = self.step(step)?;
            if let Some(max) = model.max_cycles {
                if counters.get(step) >= max {
                    return Err(Error::IllegalAction {
                        action,
                        reason: format!("at most {max} cycle(s) allowed"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn legal_actions(&self, counters: &CycleCounters) -> Vec<Action> {
        self.actions
            .iter()
            .copied()
            .filter(|a| self.check_legal(*a, counters).is_ok())
            .collect()
    }

    /// Whether the remaining steps could still bring roughness `sigma` to the
    /// roughness target. A step whose reset bound lies above the target only
    /// counts if its reset distribution reaches the target within
    /// [`RESET_TAIL_SIGMAS`] standard deviations.
    pub fn roughness_reachable(&self, sigma: f64, counters: &CycleCounters) -> bool {
        let target = self.target_roughness_nm;
        if sigma <= target {
            return true;
        }
        self.actions
            .iter()
            .filter_map(|a| a.as_processing())
            .filter(|p| self.check_legal((*p).into(), counters).is_ok())
            .filter_map(|p| self.step(p).ok().map(|m| (p, m)))
            .any(|(p, m)| {
                let next = counters.get(p) + 1;
                let lowers = m.regimes.iter().any(|r| {
                    r.last_cycle.is_none_or(|last| last >= next)
                        && !matches!(r.roughness, RoughnessUpdate::Unchanged)
                });
                lowers
                    && m.reset.is_none_or(|r| {
                        r.bound <= target || r.mean - RESET_TAIL_SIGMAS * r.std_scale * self.alpha <= target
                    })
            })
    }

    /// Cheapest enabled measurement for `metric` at the configured area.
    pub fn cheapest_measurement(&self, metric: Metric) -> Option<MeasurementStep> {
        self.actions
            .iter()
            .filter_map(|a| a.as_measurement())
            .filter(|m| m.metric() == metric)
            .filter_map(|m| {
                super::step_duration(m.into(), &CycleCounters::default(), self)
                    .ok()
                    .map(|d| (m, d))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(m, _)| m)
    }

    /// Longest duration any single enabled step can take.
    pub fn longest_step_minutes(&self) -> f64 {
        let mut longest: f64 = 0.0;
        for action in &self.actions {
            match action {
                Action::Processing(p) => {
                    if let Ok(model) = self.step(*p) {
                        for r in &model.regimes {
                            longest = longest.max(r.duration.minutes(self.area_mm2));
                        }
                    }
                }
                Action::Measurement(m) => {
                    if let Ok(d) = super::step_duration((*m).into(), &CycleCounters::default(), self)
                    {
                        longest = longest.max(d);
                    }
                }
            }
        }
        longest
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::config("model.alpha", "must be >= 0"));
        }
        if !(self.area_mm2 > 0.0) {
            return Err(Error::config("model.area_mm2", "must be > 0"));
        }
        if !(self.target_shape_nm > 0.0) {
            return Err(Error::config("model.target_shape_nm", "must be > 0"));
        }
        if !(self.target_roughness_nm > 0.0) {
            return Err(Error::config("model.target_roughness_nm", "must be > 0"));
        }
        if !(self.reward_time_scale_min > 0.0) {
            return Err(Error::config("model.reward_time_scale_min", "must be > 0"));
        }
        if self.actions.is_empty() {
            return Err(Error::config("model.actions", "at least one action required"));
        }
        for action in &self.actions {
            match action {
                Action::Processing(p) => self.step(*p)?.validate(p.name())?,
                Action::Measurement(m) => {
                    let mm = self.measurement(*m)?;
                    if mm.std_scale < 0.0
                        || mm.duration.setup_min < 0.0
                        || mm.duration.per_area_min < 0.0
                    {
                        return Err(Error::config(
                            format!("model.measurements.{m}"),
                            "std scale and duration coefficients must be >= 0",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_validates() {
        ProcessConfig::table1().validate().unwrap();
    }

    #[test]
    fn regimes_must_be_exhaustive() {
        let mut cfg = ProcessConfig::table1();
        cfg.steps
            .get_mut(&ProcessingStep::Ccp1)
            .unwrap()
            .regimes
            .pop();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("CCP1"), "{err}");
    }

    #[test]
    fn overlapping_regimes_rejected() {
        let mut cfg = ProcessConfig::table1();
        let mrf = cfg.steps.get_mut(&ProcessingStep::Mrf).unwrap();
        mrf.regimes[1].first_cycle = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn roughness_unreachable_once_ccp3_is_spent() {
        let cfg = ProcessConfig::table1().with_alpha(0.1);
        let fresh = CycleCounters::default();
        let spent = fresh.incremented(ProcessingStep::Ccp3);
        assert!(cfg.roughness_reachable(2.8, &fresh));
        assert!(cfg.roughness_reachable(0.45, &spent));
        // CCP2 and MRF floor at 0.6 and 2.0, CCP1 leaves roughness alone
        assert!(!cfg.roughness_reachable(0.55, &spent));
        // at alpha = 1 the CCP2 reset draw reaches 0.5 within six deviations
        assert!(ProcessConfig::table1().roughness_reachable(0.55, &spent));
    }

    #[test]
    fn ccp3_limited_to_one_cycle() {
        let cfg = ProcessConfig::table1();
        let used = CycleCounters::default().incremented(ProcessingStep::Ccp3);
        assert!(cfg.check_legal(ProcessingStep::Ccp3.into(), &used).is_err());
        assert!(!cfg.legal_actions(&used).contains(&ProcessingStep::Ccp3.into()));
        assert_eq!(cfg.legal_actions(&CycleCounters::default()).len(), 8);
    }

    #[test]
    fn cheapest_shape_measurement_at_reference_area() {
        let cfg = ProcessConfig::table1();
        // 120 + 7850/200 = 159.25 beats 277.5 and 308.4
        assert_eq!(
            cfg.cheapest_measurement(Metric::Shape),
            Some(MeasurementStep::Deflectometry)
        );
        assert_eq!(cfg.cheapest_measurement(Metric::Roughness), Some(MeasurementStep::Sls));
        assert!((cfg.longest_step_minutes() - 660.0).abs() < 1e-9);
    }

    #[test]
    fn bad_scalars_name_their_key() {
        let mut cfg = ProcessConfig::table1();
        cfg.reward_time_scale_min = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("reward_time_scale_min"));
        let cfg = ProcessConfig { target_shape_nm: -1.0, ..ProcessConfig::table1() };
        assert!(cfg.validate().unwrap_err().to_string().contains("target_shape_nm"));
    }
}
