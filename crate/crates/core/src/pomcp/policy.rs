//! Tree policy (UCB1) and the expert default policy used for rollouts.

use std::collections::VecDeque;

use rand::Rng;

use super::{NodeId, SearchConfig, SearchTree};
use crate::model::{
    self, Action, CycleCounters, Metric, ProcessConfig, ProcessingStep, QualityState,
};

/// Assumed per-cycle roughness factor of CCP2 in the chain heuristic.
const CCP2_ROUGHNESS: f64 = 0.9;
/// Assumed per-cycle shape factor of CCP2 in the chain heuristic.
const CCP2_SHAPE: f64 = 1.1;
const CCP3_ROUGHNESS: f64 = 0.75;
const CCP3_SHAPE: f64 = 1.025;
const MRF_RESET_DEFAULT: f64 = 2.0;

pub fn ucb_score(value: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    value + c * ((parent_visits as f64).ln() / visits as f64).sqrt()
}

/// Index of the child to descend into. Unvisited children win outright
/// (first one in order); otherwise the largest UCB score, ties to the earliest.
pub fn ucb_select(parent_visits: u64, children: &[(f64, u64)], c: f64) -> Option<usize> {
    if let Some(i) = children.iter().position(|(_, n)| *n == 0) {
        return Some(i);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (v, n)) in children.iter().enumerate() {
        let s = ucb_score(*v, *n, parent_visits, c);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// UCB choice among the selectable action children of a decision node.
pub fn select_child_ucb(tree: &SearchTree, node: NodeId, c: f64) -> Option<NodeId> {
    let children: Vec<NodeId> = tree.selectable_children(node).collect();
    let stats: Vec<(f64, u64)> = children
        .iter()
        .map(|id| {
            let n = tree.node(*id);
            (n.value(), n.visits)
        })
        .collect();
    ucb_select(tree.node(node).visits, &stats, c).map(|i| children[i])
}

/// Probability of choosing MRF over CCP2 while roughness is above the MRF reset bound.
pub fn p_mrf(shape_nm: f64, roughness_nm: f64, target_shape_nm: f64, target_roughness_nm: f64) -> f64 {
    ((roughness_nm / target_roughness_nm) / (shape_nm / target_shape_nm)).clamp(0.0, 1.0)
}

/// Smallest `n >= 0` with `roughness * 0.75 * 0.9^n <= target`.
pub fn ccp2_cycles_needed(roughness_nm: f64, target_roughness_nm: f64) -> u32 {
    let ok = |n: u32| roughness_nm * CCP3_ROUGHNESS * CCP2_ROUGHNESS.powi(n as i32) <= target_roughness_nm;
    if ok(0) {
        return 0;
    }
    let estimate = ((target_roughness_nm / (CCP3_ROUGHNESS * roughness_nm)).ln() / CCP2_ROUGHNESS.ln())
        .ceil()
        .max(0.0) as u32;
    let mut n = estimate;
    while n > 0 && ok(n - 1) {
        n -= 1;
    }
    while !ok(n) {
        n += 1;
    }
    n
}

/// Whether a CCP2 chain followed by CCP3 is expected to reach the roughness
/// target before the shape drifts out of target. The roughness side is
/// inflated by `1 + alpha` to account for process noise.
pub fn chain_gate(
    shape_nm: f64,
    roughness_nm: f64,
    target_shape_nm: f64,
    target_roughness_nm: f64,
    alpha: f64,
) -> bool {
    let cycles_for_roughness =
        (target_roughness_nm / (roughness_nm * CCP3_ROUGHNESS)).ln() / CCP2_ROUGHNESS.ln();
    let cycles_shape_allows = (target_shape_nm / (shape_nm * CCP3_SHAPE)).ln() / CCP2_SHAPE.ln();
    (1.0 + alpha) * cycles_for_roughness < cycles_shape_allows
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExpertChoice {
    /// In target: take the missing confirming measurements and stop.
    Finish,
    Steps(Vec<ProcessingStep>),
}

fn mrf_reset_bound(model: &ProcessConfig) -> f64 {
    model
        .steps
        .get(&ProcessingStep::Mrf)
        .and_then(|s| s.reset)
        .map_or(MRF_RESET_DEFAULT, |r| r.bound)
}

/// One decision of the expert heuristic for a simulated state.
pub fn expert_choice<R: Rng + ?Sized>(
    state: &QualityState,
    counters: &CycleCounters,
    model: &ProcessConfig,
    rng: &mut R,
) -> ExpertChoice {
    if model::in_target(state, model) {
        return ExpertChoice::Finish;
    }
    let (f, s) = (state.shape_f, state.roughness_sigma);
    let (tf, ts) = (model.target_shape_nm, model.target_roughness_nm);
    if s >= mrf_reset_bound(model) {
        let step = if rng.random::<f64>() < p_mrf(f, s, tf, ts) {
            ProcessingStep::Mrf
        } else {
            ProcessingStep::Ccp2
        };
        return ExpertChoice::Steps(vec![step]);
    }
    if chain_gate(f, s, tf, ts, model.alpha) {
        let n = ccp2_cycles_needed(s, ts);
        let mut steps = vec![ProcessingStep::Ccp2; n as usize];
        if model
            .check_legal(ProcessingStep::Ccp3.into(), counters)
            .is_ok()
        {
            steps.push(ProcessingStep::Ccp3);
        }
        if !steps.is_empty() {
            return ExpertChoice::Steps(steps);
        }
    }
    let step = if rng.random::<bool>() {
        ProcessingStep::Ccp1
    } else {
        ProcessingStep::Mrf
    };
    ExpertChoice::Steps(vec![step])
}

/// Where a rollout starts: remaining step budget and which metrics are
/// already confirmed since the last processing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutStart {
    pub steps_left: usize,
    pub shape_confirmed: bool,
    pub roughness_confirmed: bool,
}

/// Simulate the expert heuristic from one state and return the summed reward.
///
/// Illegal or disabled heuristic picks are replaced by a uniformly drawn legal
/// processing step. Hitting the step budget adds `failure_penalty`.
pub fn rollout<R: Rng + ?Sized>(
    mut state: QualityState,
    mut counters: CycleCounters,
    start: RolloutStart,
    model: &ProcessConfig,
    failure_penalty: f64,
    rng: &mut R,
) -> f64 {
    let mut total = 0.0;
    let mut steps = 0;
    let mut confirmed = (start.shape_confirmed, start.roughness_confirmed);
    let mut queue: VecDeque<ProcessingStep> = VecDeque::new();
    loop {
        if model::in_target(&state, model) {
            if !model.terminal_requires_measurements {
                return total;
            }
            let missing = [(Metric::Shape, confirmed.0), (Metric::Roughness, confirmed.1)];
            for (metric, done) in missing {
                if done {
                    continue;
                }
                let Some(m) = model.cheapest_measurement(metric) else {
                    return total + failure_penalty;
                };
                if steps >= start.steps_left {
                    return total + failure_penalty;
                }
                let minutes = model::step_duration(m.into(), &counters, model).unwrap_or(0.0);
                total += model::reward(minutes, model);
                steps += 1;
            }
            return total;
        }
        if steps >= start.steps_left {
            return total + failure_penalty;
        }
        let step = match queue.pop_front() {
            Some(s) => s,
            None => match expert_choice(&state, &counters, model, rng) {
                ExpertChoice::Finish => unreachable!("in-target handled above"),
                ExpertChoice::Steps(s) => {
                    queue.extend(s);
                    queue.pop_front().expect("expert chose no step")
                }
            },
        };
        let step = if model.check_legal(step.into(), &counters).is_ok() {
            step
        } else {
            queue.clear();
            let legal: Vec<ProcessingStep> = model
                .legal_actions(&counters)
                .into_iter()
                .filter_map(Action::as_processing)
                .collect();
            if legal.is_empty() {
                return total + failure_penalty;
            }
            legal[rng.random_range(0..legal.len())]
        };
        match model::transition(state, counters, step, rng, model) {
            Ok((next, minutes, c)) => {
                state = next;
                counters = c;
                total += model::reward(minutes, model);
                steps += 1;
                confirmed = (false, false);
            }
            Err(_) => return total + failure_penalty,
        }
    }
}

/// Rollout from a sampled particle with the full horizon and nothing confirmed.
pub fn default_policy<R: Rng + ?Sized>(
    state: QualityState,
    counters: CycleCounters,
    model: &ProcessConfig,
    cfg: &SearchConfig,
    rng: &mut R,
) -> f64 {
    let start = RolloutStart {
        steps_left: cfg.rollout_horizon,
        shape_confirmed: false,
        roughness_confirmed: false,
    };
    rollout(state, counters, start, model, cfg.failure_penalty(model), rng)
}
