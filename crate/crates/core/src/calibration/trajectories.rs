use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::objective::simulate_record;
use super::{parse_chain, resolve_chain, CalibrationRecord, Checkpoint};
use crate::belief::InitialBelief;
use crate::error::Result;
use crate::model::{self, Action, CycleCounters, ProcessConfig};
use crate::sampling::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    /// 0 is the initial state; step `k` is the state after the k-th action.
    pub step_index: usize,
    pub action: Option<Action>,
    pub f_nm: f64,
    pub sigma_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub points: Vec<TrajPoint>,
}

/// Simulate `n` ground-truth trajectories of a fixed action sequence.
/// Measurements leave the state unchanged but still produce a point.
pub fn generate_trajectories(
    model: &ProcessConfig,
    initial: &InitialBelief,
    actions: &[Action],
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    initial.validate()?;
    (0..n)
        .map(|id| {
            let mut rng = rng_from_seed(derive_seed(seed, id as u64));
            let mut state = initial.sample(&mut rng);
            let mut counters = CycleCounters::default();
            let mut points = vec![TrajPoint { step_index: 0, action: None, f_nm: state.shape_f, sigma_nm: state.roughness_sigma }];
            for (k, &a) in actions.iter().enumerate() {
                model.check_legal(a, &counters)?;
                if let Action::Processing(step) = a {
                    let (s, _, c) = model::transition(state, counters, step, &mut rng, model)?;
                    state = s;
                    counters = c;
                }
                points.push(TrajPoint { step_index: k + 1, action: Some(a), f_nm: state.shape_f, sigma_nm: state.roughness_sigma });
            }
            Ok(Trajectory { id, points })
        })
        .collect()
}

/// `trajectory_id,step_index,action,f_nm,sigma_nm`; the initial row has an empty action.
pub fn trajectories_csv(trajectories: &[Trajectory]) -> String {
    let mut s = String::from("trajectory_id,step_index,action,f_nm,sigma_nm\n");
    for t in trajectories {
        for p in &t.points {
            let action = p.action.map_or("", |a| a.name());
            let _ = writeln!(s, "{},{},{},{},{}", t.id, p.step_index, action, p.f_nm, p.sigma_nm);
        }
    }
    s
}

/// A record whose checkpoint values are the simulated means of `model`,
/// for testing that a calibration recovers known parameters.
pub fn synthesize_record(
    model: &ProcessConfig,
    chain: &str,
    counts: &BTreeMap<String, u32>,
    checkpoints_after: &[usize],
    initial_shape_nm: f64,
    initial_roughness_nm: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<CalibrationRecord> {
    let items = parse_chain(chain)?;
    resolve_chain(&items, counts)?;
    let channels = initial_roughness_nm.len();
    let mut record = CalibrationRecord {
        name: "synthetic".into(),
        chain: chain.to_string(),
        initial_shape_nm,
        initial_roughness_nm: initial_roughness_nm.to_vec(),
        checkpoints: checkpoints_after
            .iter()
            .map(|&after| Checkpoint { after, shape_nm: Some(1.0), roughness_nm: vec![1.0; channels] })
            .collect(),
    };
    record.validate()?;
    let sims = simulate_record(&record, &items, counts, model, n_traj, seed)?;
    for (cp, (f, sigma)) in record.checkpoints.iter_mut().zip(sims) {
        cp.shape_nm = Some(f);
        cp.roughness_nm = sigma;
    }
    Ok(record)
}
