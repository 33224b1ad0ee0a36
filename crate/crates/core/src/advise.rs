//! Following a plan during production: the engineer enters each measurement
//! reading and gets back the next run of steps.
//!
//! A session is a cursor into the plan plus the readings that led there.
//! Advice is a pure function of (plan, path, reading), so replaying the
//! recorded readings from the root reproduces the cursor.

use serde::{Deserialize, Serialize};

use crate::belief::bin_of;
use crate::error::{Error, Result};
use crate::model::MeasurementStep;
use crate::pomcp::{PlanNode, PlanTree, RunEntry};

/// What to do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Advice {
    /// Run these processing steps, then take `measurement`.
    Next {
        action_run: Vec<RunEntry>,
        measurement: MeasurementStep,
        label: String,
        /// Probability-weighted minutes from here to the end of the plan.
        expected_remaining_min: f64,
    },
    /// The plan ends here; `action_run` is whatever is left to do first.
    Done {
        action_run: Vec<RunEntry>,
        success: bool,
        planned_total_min: Option<f64>,
    },
    /// The reading fell into a bin the plan has no branch for. The cursor
    /// does not move, so a repeated measurement can be entered.
    OutOfPlan {
        measurement: MeasurementStep,
        value_nm: f64,
        bin_low: f64,
        bin_high: Option<f64>,
        nearest: BranchHint,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchHint {
    pub branch: usize,
    pub bin_low: f64,
    pub bin_high: Option<f64>,
    pub probability: f64,
    /// Label of the branch's next node.
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub measurement: MeasurementStep,
    pub value_nm: f64,
    /// Branch index taken.
    pub branch: usize,
}

/// Mean minutes from the start of `node` to the end of the plan, weighting
/// branches by their probabilities.
pub fn expected_remaining(node: &PlanNode) -> f64 {
    node.duration_min + node.branches.iter().map(|b| b.probability * expected_remaining(&b.child)).sum::<f64>()
}

/// Advice at a cursor node, before its measurement is taken.
pub fn advice_at(node: &PlanNode) -> Advice {
    match node.measurement {
        Some(measurement) if !node.branches.is_empty() => Advice::Next {
            action_run: node.action_run.clone(),
            measurement,
            label: node.label(),
            expected_remaining_min: expected_remaining(node),
        },
        _ => Advice::Done {
            action_run: node.action_run.clone(),
            success: node.leaf.is_none_or(|l| l.success),
            planned_total_min: node.leaf.map(|l| l.total_duration_min),
        },
    }
}

fn distance(value: f64, low: f64, high: Option<f64>) -> f64 {
    if value < low {
        low - value
    } else {
        high.map_or(0.0, |h| (value - h).max(0.0))
    }
}

/// One step of plan following from the node at `path`. Returns the advice
/// and, unless the reading is out of plan, the branch index taken.
pub fn advise_next(
    plan: &PlanTree,
    path: &[usize],
    measurement: Option<MeasurementStep>,
    value_nm: f64,
) -> Result<(Advice, Option<usize>)> {
    let node = plan
        .root
        .descend(path)
        .ok_or_else(|| Error::SessionState(format!("path {path:?} is not in the plan")))?;
    let expected = match node.measurement {
        Some(m) if !node.branches.is_empty() => m,
        _ => return Err(Error::SessionState("the plan is finished; no reading is expected".into())),
    };
    if let Some(m) = measurement.filter(|m| *m != expected) {
        return Err(Error::SessionState(format!("expected a {expected} reading, got {m}")));
    }
    if !(value_nm.is_finite() && value_nm > 0.0) {
        return Err(Error::InvalidState(format!("reading must be a positive number of nanometres, got {value_nm}")));
    }
    let bin = bin_of(value_nm, &plan.binning, expected.metric());
    match node.branches.iter().position(|b| b.contains(value_nm)) {
        Some(i) => Ok((advice_at(&node.branches[i].child), Some(i))),
        None => {
            let (i, b) = node
                .branches
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    distance(value_nm, a.bin_low, a.bin_high).total_cmp(&distance(value_nm, b.bin_low, b.bin_high))
                })
                .expect("a measurement node has branches");
            let advice = Advice::OutOfPlan {
                measurement: expected,
                value_nm,
                bin_low: bin.low,
                bin_high: bin.high,
                nearest: BranchHint {
                    branch: i,
                    bin_low: b.bin_low,
                    bin_high: b.bin_high,
                    probability: b.probability,
                    label: b.child.label(),
                },
            };
            Ok((advice, None))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviseSession {
    pub id: String,
    /// Branch indices from the plan root to the cursor.
    pub path: Vec<usize>,
    pub observations: Vec<Observation>,
    pub advice: Advice,
}

impl AdviseSession {
    pub fn new(id: impl Into<String>, plan: &PlanTree) -> Self {
        Self { id: id.into(), path: vec![], observations: vec![], advice: advice_at(&plan.root) }
    }

    pub fn is_done(&self) -> bool {
        matches!(self.advice, Advice::Done { .. })
    }

    /// Enter a reading at the cursor. Out-of-plan readings are reported but
    /// not recorded.
    pub fn observe(&mut self, plan: &PlanTree, measurement: Option<MeasurementStep>, value_nm: f64) -> Result<Advice> {
        let (advice, branch) = advise_next(plan, &self.path, measurement, value_nm)?;
        if let Some(b) = branch {
            let m = plan.root.descend(&self.path).and_then(|n| n.measurement).expect("checked by advise_next");
            self.path.push(b);
            self.observations.push(Observation { measurement: m, value_nm, branch: b });
            self.advice = advice.clone();
        }
        Ok(advice)
    }

    /// Rebuild a session from its recorded readings.
    pub fn replay(id: impl Into<String>, plan: &PlanTree, observations: &[Observation]) -> Result<Self> {
        let mut s = Self::new(id, plan);
        for o in observations {
            if let Advice::OutOfPlan { .. } = s.observe(plan, Some(o.measurement), o.value_nm)? {
                return Err(Error::SessionState(format!("reading {} nm leaves the plan", o.value_nm)));
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Binning;
    use crate::model::ProcessingStep;
    use crate::pomcp::{PlanBranch, PlanLeaf, Targets, PLAN_FORMAT};

    fn leaf(run: Vec<RunEntry>, m: Option<MeasurementStep>, total: f64) -> PlanNode {
        PlanNode {
            action_run: run,
            measurement: m,
            duration_min: 0.0,
            branches: vec![],
            leaf: Some(PlanLeaf { success: true, total_duration_min: total, share: 0.5 }),
        }
    }

    /// Main run, SLS; below target go to Deflectometry and stop, above it
    /// rework with CCP2 and measure again.
    fn plan() -> PlanTree {
        let defl = PlanNode {
            action_run: vec![],
            measurement: Some(MeasurementStep::Deflectometry),
            duration_min: 160.0,
            branches: vec![PlanBranch { bin_low: 0.0, bin_high: Some(13.0), probability: 1.0, child: leaf(vec![], None, 9000.0) }],
            leaf: None,
        };
        let rework = PlanNode {
            action_run: vec![RunEntry { action: ProcessingStep::Ccp2, count: 2 }],
            measurement: Some(MeasurementStep::Sls),
            duration_min: 960.0,
            branches: vec![PlanBranch { bin_low: 0.0, bin_high: Some(0.5), probability: 1.0, child: leaf(vec![], None, 10000.0) }],
            leaf: None,
        };
        let root = PlanNode {
            action_run: vec![RunEntry { action: ProcessingStep::Mrf, count: 13 }],
            measurement: Some(MeasurementStep::Sls),
            duration_min: 8000.0,
            branches: vec![
                PlanBranch { bin_low: 0.0, bin_high: Some(0.5), probability: 0.75, child: defl },
                PlanBranch { bin_low: 0.5, bin_high: Some(1.0), probability: 0.25, child: rework },
            ],
            leaf: None,
        };
        PlanTree {
            format: PLAN_FORMAT.into(),
            binning: Binning::new(vec![13.0], vec![0.5, 1.0]).unwrap(),
            targets: Targets { shape_nm: 13.0, roughness_nm: 0.5 },
            root,
        }
    }

    #[test]
    fn expected_remaining_weights_branches() {
        let p = plan();
        assert_eq!(expected_remaining(&p.root), 8000.0 + 0.75 * 160.0 + 0.25 * 960.0);
        match AdviseSession::new("s", &p).advice {
            Advice::Next { measurement, label, .. } => {
                assert_eq!(measurement, MeasurementStep::Sls);
                assert_eq!(label, "MRF (13); SLS");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn follows_branches_to_done() {
        let p = plan();
        let mut s = AdviseSession::new("s", &p);
        let a = s.observe(&p, Some(MeasurementStep::Sls), 0.7).unwrap();
        assert!(matches!(a, Advice::Next { measurement: MeasurementStep::Sls, .. }));
        assert_eq!(s.path, vec![1]);
        let a = s.observe(&p, None, 0.3).unwrap();
        assert!(matches!(a, Advice::Done { success: true, planned_total_min: Some(t), .. } if t == 10000.0));
        assert!(s.is_done());
        assert!(matches!(s.observe(&p, None, 0.3), Err(Error::SessionState(_))));
    }

    #[test]
    fn low_roughness_leads_to_deflectometry() {
        let p = plan();
        let (a, b) = advise_next(&p, &[], Some(MeasurementStep::Sls), 0.42).unwrap();
        assert_eq!(b, Some(0));
        assert!(matches!(a, Advice::Next { measurement: MeasurementStep::Deflectometry, .. }));
    }

    #[test]
    fn out_of_plan_keeps_the_cursor() {
        let p = plan();
        let mut s = AdviseSession::new("s", &p);
        let a = s.observe(&p, None, 1.7).unwrap();
        match a {
            Advice::OutOfPlan { bin_low, bin_high, nearest, .. } => {
                assert_eq!((bin_low, bin_high), (1.0, None));
                assert_eq!(nearest.branch, 1);
            }
            other => panic!("{other:?}"),
        }
        assert!(s.path.is_empty() && s.observations.is_empty());
    }

    #[test]
    fn wrong_measurement_or_value_is_rejected() {
        let p = plan();
        assert!(matches!(advise_next(&p, &[], Some(MeasurementStep::Deflectometry), 0.3), Err(Error::SessionState(_))));
        assert!(matches!(advise_next(&p, &[], None, -1.0), Err(Error::InvalidState(_))));
        assert!(matches!(advise_next(&p, &[7], None, 0.3), Err(Error::SessionState(_))));
    }

    #[test]
    fn replay_reproduces_the_cursor() {
        let p = plan();
        let mut s = AdviseSession::new("s", &p);
        s.observe(&p, None, 0.8).unwrap();
        s.observe(&p, None, 0.2).unwrap();
        let r = AdviseSession::replay("s", &p, &s.observations).unwrap();
        assert_eq!(r, s);
    }
}
