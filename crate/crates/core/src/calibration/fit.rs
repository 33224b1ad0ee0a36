use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{minimize_in_box, objective, CalibrationProblem, CalibrationRecord, Params, SimplexOptions};
use crate::error::{Error, Result};
use crate::model::ProcessConfig;
use crate::sampling::{derive_seed, rng_from_seed};

/// Added to the summed constraint violation so that any infeasible point
/// ranks behind every feasible one while still pointing back to feasibility.
const INFEASIBLE_BASE: f64 = 1e6;

/// Best fit for one combination of cycle counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboRow {
    pub cycles: BTreeMap<String, u32>,
    /// `None` when no feasible point was found.
    pub objective: Option<f64>,
    pub means: BTreeMap<String, f64>,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: Params,
    pub objective: f64,
    pub evaluations: usize,
    /// Every combination of cycle counts, in sweep order.
    pub table: Vec<ComboRow>,
}

impl CalibrationResult {
    /// `model` with the fitted means applied.
    pub fn model(&self, model: &ProcessConfig) -> Result<ProcessConfig> {
        self.params.apply(model)
    }
}

fn combinations(ranges: &BTreeMap<String, [u32; 2]>) -> Result<Vec<BTreeMap<String, u32>>> {
    let mut out = vec![BTreeMap::new()];
    for (name, [lo, hi]) in ranges {
        if lo > hi {
            return Err(Error::NoFeasiblePoint(format!("cycle range `{name}` = [{lo}, {hi}] is empty")));
        }
        out = out
            .into_iter()
            .flat_map(|combo| {
                (*lo..=*hi).map(move |n| {
                    let mut c = combo.clone();
                    c.insert(name.clone(), n);
                    c
                })
            })
            .collect();
    }
    Ok(out)
}

/// Sweep every combination of cycle counts exhaustively and fit the
/// continuous means for each by restarted, box-bounded Nelder–Mead. The
/// first restart starts from the box centre, later ones from seeded uniform
/// points. Simulations use common random numbers throughout, so the
/// objective is a deterministic function of the parameters.
pub fn calibrate(problem: &CalibrationProblem, records: &[CalibrationRecord], model: &ProcessConfig) -> Result<CalibrationResult> {
    let parsed = problem.parse()?;
    if records.is_empty() {
        return Err(Error::config("records", "at least one record required"));
    }
    for r in records {
        r.validate()?;
    }
    let names: Vec<String> = parsed.keys.iter().map(|k| k.to_string()).collect();
    for k in &parsed.keys {
        k.get(model)?;
    }
    let combos = combinations(&problem.cycles)?;
    let budget = (problem.max_evaluations / problem.restarts.max(1)).max(1);
    let centre: Vec<f64> = parsed.bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
    let mut rng = rng_from_seed(derive_seed(problem.seed, u64::MAX));
    let starts: Vec<Vec<f64>> = std::iter::once(centre)
        .chain((1..problem.restarts.max(1)).map(|_| parsed.bounds.iter().map(|b| rng.random_range(b[0]..=b[1])).collect()))
        .collect();

    let mut table = Vec::with_capacity(combos.len());
    let mut total_evals = 0;
    for cycles in combos {
        let mut error = None;
        let mut evals = 0;
        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in &starts {
            let mut f = |x: &[f64]| -> f64 {
                let params = Params { means: names.iter().cloned().zip(x.iter().copied()).collect(), cycles: cycles.clone() };
                let penalty = params.apply(model).and_then(|m| {
                    parsed.constraints.iter().map(|c| c.violation(&m)).sum::<Result<f64>>()
                });
                match penalty {
                    Ok(p) if p > 0.0 => return INFEASIBLE_BASE + p,
                    Ok(_) => {}
                    Err(e) => {
                        error.get_or_insert(e.to_string());
                        return f64::INFINITY;
                    }
                }
                match objective(&parsed, &params, records, model, problem.trajectories_per_eval, problem.seed) {
                    Ok(e) => e.value,
                    Err(e) => {
                        error.get_or_insert(e.to_string());
                        f64::INFINITY
                    }
                }
            };
            let opts = SimplexOptions { max_evaluations: budget, ..SimplexOptions::default() };
            let r = minimize_in_box(&mut f, start, &parsed.bounds, opts);
            evals += r.evaluations;
            if best.as_ref().is_none_or(|(v, _)| r.value < *v) {
                best = Some((r.value, r.x));
            }
            if error.is_some() {
                // a chain the model rejects fails identically at every point
                break;
            }
        }
        total_evals += evals;
        let (value, x) = best.unwrap_or((f64::INFINITY, vec![]));
        let feasible = value < INFEASIBLE_BASE;
        table.push(ComboRow {
            cycles,
            objective: feasible.then_some(value),
            means: names.iter().cloned().zip(x).collect(),
            evaluations: evals,
            note: error.or_else(|| (!feasible).then(|| "no point satisfies the constraints".to_string())),
        });
        log::debug!("calibrate: {:?} -> {:?}", table.last().map(|r| &r.cycles), table.last().and_then(|r| r.objective));
    }

    let best = table
        .iter()
        .filter_map(|row| row.objective.map(|v| (v, row)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::NoFeasiblePoint("no combination of cycle counts admits a feasible fit".into()))?;
    Ok(CalibrationResult {
        params: Params { means: best.1.means.clone(), cycles: best.1.cycles.clone() },
        objective: best.0,
        evaluations: total_evals,
        table: table.clone(),
    })
}
