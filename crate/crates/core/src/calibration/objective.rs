use std::collections::BTreeMap;

use super::{resolve_chain, CalibrationRecord, ChainItem, ParsedProblem, Params};
use crate::error::{Error, Result};
use crate::model::{self, Action, CycleCounters, ProcessConfig, QualityState};
use crate::sampling::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean relative error over all checkpoint terms; `+inf` on violation.
    pub value: f64,
    /// Which bound or constraint was broken, if any.
    pub violation: Option<String>,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.violation.is_none()
    }
}

/// Simulated mean quality at every checkpoint of one record.
///
/// Every trajectory of channel `c` in record `r` draws from its own stream
/// seeded by `(seed, r, c, trajectory)`, so repeated calls with different
/// parameters share their random numbers.
pub(super) fn simulate_record(
    record: &CalibrationRecord,
    items: &[ChainItem],
    counts: &BTreeMap<String, u32>,
    model: &ProcessConfig,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let runs = resolve_chain(items, counts)?;
    let channels = record.initial_roughness_nm.len();
    let mut shape = vec![0.0; record.checkpoints.len()];
    let mut sigma = vec![vec![0.0; channels]; record.checkpoints.len()];
    for (c, &sigma0) in record.initial_roughness_nm.iter().enumerate() {
        for t in 0..n_traj {
            let stream = derive_seed(seed, ((c as u64) << 32) | t as u64);
            let mut rng = rng_from_seed(stream);
            let mut state = QualityState { shape_f: record.initial_shape_nm, roughness_sigma: sigma0 };
            let mut counters = CycleCounters::default();
            let mut next_cp = 0;
            for (i, &(action, n)) in runs.iter().enumerate() {
                if let Action::Processing(step) = action {
                    for _ in 0..n {
                        let (s, _, k) = model::transition(state, counters, step, &mut rng, model)?;
                        state = s;
                        counters = k;
                    }
                }
                if record.checkpoints.get(next_cp).is_some_and(|cp| cp.after == i) {
                    shape[next_cp] += state.shape_f;
                    sigma[next_cp][c] += state.roughness_sigma;
                    next_cp += 1;
                }
            }
        }
    }
    let all = (channels * n_traj) as f64;
    Ok(shape
        .into_iter()
        .zip(sigma)
        .map(|(f, s)| (f / all, s.into_iter().map(|v| v / n_traj as f64).collect()))
        .collect())
}

/// Mean over checkpoints of `|sim - measured| / measured`, with the roughness
/// term averaged across magnifications. Parameters outside their bounds or
/// breaking an ordering constraint give `+inf` with the reason attached.
pub fn objective(
    problem: &ParsedProblem,
    params: &Params,
    records: &[CalibrationRecord],
    model: &ProcessConfig,
    n_traj: usize,
    seed: u64,
) -> Result<Evaluation> {
    for (key, b) in problem.keys.iter().zip(&problem.bounds) {
        let v = params
            .means
            .get(&key.to_string())
            .ok_or_else(|| Error::InvalidSpec(format!("no value for parameter {key}")))?;
        if !(b[0]..=b[1]).contains(v) {
            return Ok(Evaluation { value: f64::INFINITY, violation: Some(format!("{key} = {v} outside [{}, {}]", b[0], b[1])) });
        }
    }
    let m = params.apply(model)?;
    for c in &problem.constraints {
        if c.violation(&m)? > 0.0 {
            return Ok(Evaluation { value: f64::INFINITY, violation: Some(format!("{} > {}", c.lower, c.upper)) });
        }
    }
    let mut total = 0.0;
    let mut terms = 0usize;
    for (r, record) in records.iter().enumerate() {
        let items = record.validate()?;
        let sims = simulate_record(record, &items, &params.cycles, &m, n_traj, derive_seed(seed, r as u64))?;
        for (cp, (f, sigma)) in record.checkpoints.iter().zip(sims) {
            if let Some(measured) = cp.shape_nm {
                total += (f - measured).abs() / measured;
                terms += 1;
            }
            if !cp.roughness_nm.is_empty() {
                let rel: f64 = sigma.iter().zip(&cp.roughness_nm).map(|(s, m)| (s - m).abs() / m).sum();
                total += rel / sigma.len() as f64;
                terms += 1;
            }
        }
    }
    if terms == 0 {
        return Err(Error::InvalidSpec("no calibration records".into()));
    }
    Ok(Evaluation { value: total / terms as f64, violation: None })
}
