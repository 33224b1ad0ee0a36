//! Generative model of the polishing process.
//!
//! The hidden state is a pair of scalar quality metrics (shape deviation and
//! roughness, both in nanometres) plus a cycle counter per processing step.
//! Processing steps change the metrics stochastically; measurement steps leave
//! them untouched and return a noisy reading of one metric.

mod dynamics;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use dynamics::{in_target, measure, reward, step_duration, transition};
pub use table::{
    Affine, DurationModel, MeasurementModel, Multiplier, OverheadArg, ProcessConfig, Regime,
    Reset, RoughnessCoupling, RoughnessUpdate, StepModel, RESET_TAIL_SIGMAS,
};

/// Scalar quality metrics of the workpiece, in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityState {
    #[serde(rename = "f_nm")]
    pub shape_f: f64,
    #[serde(rename = "sigma_nm")]
    pub roughness_sigma: f64,
}

impl QualityState {
    pub fn new(shape_f: f64, roughness_sigma: f64) -> Self {
        Self {
            shape_f,
            roughness_sigma,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.shape_f > 0.0 && self.roughness_sigma > 0.0
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Shape => self.shape_f,
            Metric::Roughness => self.roughness_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Shape,
    Roughness,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Shape => f.write_str("shape"),
            Metric::Roughness => f.write_str("roughness"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProcessingStep {
    Ccp1,
    Ccp2,
    Ccp3,
    Mrf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MeasurementStep {
    /// Scattered-light sensor; also stands in for white-light interferometry.
    Sls,
    Deflectometry,
    Interferometry,
    Profilometry,
}

impl ProcessingStep {
    pub const ALL: [ProcessingStep; 4] = [Self::Ccp1, Self::Ccp2, Self::Ccp3, Self::Mrf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ccp1 => "CCP1",
            Self::Ccp2 => "CCP2",
            Self::Ccp3 => "CCP3",
            Self::Mrf => "MRF",
        }
    }
}

impl MeasurementStep {
    pub const ALL: [MeasurementStep; 4] = [
        Self::Sls,
        Self::Deflectometry,
        Self::Interferometry,
        Self::Profilometry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sls => "SLS",
            Self::Deflectometry => "Deflectometry",
            Self::Interferometry => "Interferometry",
            Self::Profilometry => "Profilometry",
        }
    }

    /// The quality metric this measurement observes.
    pub fn metric(self) -> Metric {
        match self {
            Self::Sls => Metric::Roughness,
            _ => Metric::Shape,
        }
    }
}

/// A manufacturing step. Only measurements produce observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Action {
    Processing(ProcessingStep),
    Measurement(MeasurementStep),
}

impl Action {
    /// Fixed enumeration order; tree-policy ties are broken by it.
    pub const ALL: [Action; 8] = [
        Action::Processing(ProcessingStep::Ccp1),
        Action::Processing(ProcessingStep::Ccp2),
        Action::Processing(ProcessingStep::Ccp3),
        Action::Processing(ProcessingStep::Mrf),
        Action::Measurement(MeasurementStep::Sls),
        Action::Measurement(MeasurementStep::Deflectometry),
        Action::Measurement(MeasurementStep::Interferometry),
        Action::Measurement(MeasurementStep::Profilometry),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Processing(p) => p.name(),
            Action::Measurement(m) => m.name(),
        }
    }

    pub fn is_measurement(self) -> bool {
        matches!(self, Action::Measurement(_))
    }

    pub fn as_processing(self) -> Option<ProcessingStep> {
        match self {
            Action::Processing(p) => Some(p),
            Action::Measurement(_) => None,
        }
    }

    pub fn as_measurement(self) -> Option<MeasurementStep> {
        match self {
            Action::Measurement(m) => Some(m),
            Action::Processing(_) => None,
        }
    }

    pub fn ordinal(self) -> usize {
        Action::ALL.iter().position(|a| *a == self).unwrap()
    }
}

impl From<ProcessingStep> for Action {
    fn from(p: ProcessingStep) -> Self {
        Action::Processing(p)
    }
}

impl From<MeasurementStep> for Action {
    fn from(m: MeasurementStep) -> Self {
        Action::Measurement(m)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for ProcessingStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for MeasurementStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown action `{0}`")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().trim_end_matches('.').to_ascii_lowercase();
        let action = match key.as_str() {
            "ccp1" => ProcessingStep::Ccp1.into(),
            "ccp2" => ProcessingStep::Ccp2.into(),
            "ccp3" => ProcessingStep::Ccp3.into(),
            "mrf" => ProcessingStep::Mrf.into(),
            "sls" | "wli" => MeasurementStep::Sls.into(),
            "deflectometry" | "deflekto" | "deflecto" => MeasurementStep::Deflectometry.into(),
            "interferometry" | "interfero" => MeasurementStep::Interferometry.into(),
            "profilometry" | "profilo" => MeasurementStep::Profilometry.into(),
            _ => return Err(UnknownAction(s.to_string())),
        };
        Ok(action)
    }
}

impl FromStr for ProcessingStep {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Action>()?
            .as_processing()
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

impl FromStr for MeasurementStep {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Action>()?
            .as_measurement()
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = UnknownAction;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.name().to_string()
            }
        }
    };
}

string_serde!(Action);
string_serde!(ProcessingStep);
string_serde!(MeasurementStep);

/// Executed cycles per processing step. Measurements are not counted here:
/// only processing counts influence dynamics and durations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CycleCounters {
    pub ccp1: u32,
    pub ccp2: u32,
    pub ccp3: u32,
    pub mrf: u32,
}

impl CycleCounters {
    pub fn get(&self, step: ProcessingStep) -> u32 {
        match step {
            ProcessingStep::Ccp1 => self.ccp1,
            ProcessingStep::Ccp2 => self.ccp2,
            ProcessingStep::Ccp3 => self.ccp3,
            ProcessingStep::Mrf => self.mrf,
        }
    }

    pub fn incremented(mut self, step: ProcessingStep) -> Self {
        let slot = match step {
            ProcessingStep::Ccp1 => &mut self.ccp1,
            ProcessingStep::Ccp2 => &mut self.ccp2,
            ProcessingStep::Ccp3 => &mut self.ccp3,
            ProcessingStep::Mrf => &mut self.mrf,
        };
        *slot += 1;
        self
    }

    pub fn total(&self) -> u32 {
        self.ccp1 + self.ccp2 + self.ccp3 + self.mrf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
        }
        assert_eq!("WLI".parse::<Action>().unwrap(), MeasurementStep::Sls.into());
        assert_eq!(
            "Interfero.".parse::<Action>().unwrap(),
            MeasurementStep::Interferometry.into()
        );
        assert!("polish".parse::<Action>().is_err());
        assert!("SLS".parse::<ProcessingStep>().is_err());
    }

    #[test]
    fn counters_increment_one_slot() {
        let c = CycleCounters::default().incremented(ProcessingStep::Mrf);
        assert_eq!(c.mrf, 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn serde_as_strings() {
        let json = serde_json::to_string(&Action::from(ProcessingStep::Mrf)).unwrap();
        assert_eq!(json, "\"MRF\"");
        let a: Action = serde_json::from_str("\"Deflectometry\"").unwrap();
        assert_eq!(a, MeasurementStep::Deflectometry.into());
    }
}
