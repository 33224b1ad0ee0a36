//! Monte Carlo execution of a plan against sampled ground-truth states.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PlanNode, PlanTree};
use crate::belief::InitialBelief;
use crate::error::Result;
use crate::model::{self, CycleCounters, ProcessConfig};
use crate::sampling::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Reached a successful leaf.
    Completed,
    /// Reached a leaf where the plan gives up.
    Dangling,
    /// A reading fell into a bin the plan has no branch for.
    OutOfPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateResult {
    pub outcome: Outcome,
    /// Index into `plan.root.leaves()` when a leaf was reached.
    pub leaf: Option<usize>,
    pub duration_min: f64,
    pub in_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub leaf: usize,
    /// Branch indices from the root to the leaf.
    pub path: Vec<usize>,
    pub label: String,
    pub success: bool,
    pub planned_share: f64,
    pub planned_duration_min: f64,
    /// Fraction of all evaluated states ending in this leaf.
    pub share: f64,
    pub mean_duration_min: Option<f64>,
    pub min_duration_min: Option<f64>,
    pub max_duration_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_states: usize,
    pub mean_duration_min: f64,
    pub max_duration_min: f64,
    /// Dangling plus out-of-plan states.
    pub failure_rate: f64,
    pub out_of_plan_rate: f64,
    /// States that end within both targets.
    pub in_target_rate: f64,
    /// Successful leaves only; their shares sum to `1 - failure_rate`.
    pub branches: Vec<BranchReport>,
    /// Per-state results; omitted from persisted reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StateResult>,
}

impl EvaluationReport {
    pub fn durations(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.duration_min).collect()
    }

    /// One row per successful leaf.
    pub fn branches_csv(&self) -> String {
        let mut s = String::from("leaf,label,planned_share,share,planned_duration_min,mean_duration_min,min_duration_min,max_duration_min\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
        for b in &self.branches {
            let _ = writeln!(
                s,
                "{},\"{}\",{:.6},{:.6},{:.3},{},{},{}",
                b.leaf,
                b.label.replace('"', "'"),
                b.planned_share,
                b.share,
                b.planned_duration_min,
                opt(b.mean_duration_min),
                opt(b.min_duration_min),
                opt(b.max_duration_min)
            );
        }
        s
    }
}

/// Leaves in depth-first order with their branch-index paths and labels.
fn leaf_paths(root: &PlanNode) -> Vec<(Vec<usize>, String, &PlanNode)> {
    let mut out = Vec::new();
    let mut stack: Vec<(&PlanNode, Vec<usize>, String)> = vec![(root, vec![], String::new())];
    while let Some((n, path, label)) = stack.pop() {
        let here = if label.is_empty() { n.label() } else { format!("{label} > {}", n.label()) };
        if n.is_leaf() {
            out.push((path, here, n));
            continue;
        }
        for (i, b) in n.branches.iter().enumerate().rev() {
            let bin = match b.bin_high {
                Some(h) => format!("[{}, {})", b.bin_low, h),
                None => format!("[{}, inf)", b.bin_low),
            };
            let mut p = path.clone();
            p.push(i);
            stack.push((&b.child, p, format!("{here} {bin}")));
        }
    }
    out
}

/// Execute the plan on one ground-truth state.
pub fn execute_plan<R: Rng + ?Sized>(
    plan: &PlanTree,
    mut state: model::QualityState,
    model: &ProcessConfig,
    rng: &mut R,
) -> Result<(Outcome, Vec<usize>, f64, model::QualityState)> {
    let mut counters = CycleCounters::default();
    let mut node = &plan.root;
    let mut path = Vec::new();
    let mut minutes = 0.0;
    loop {
        for step in node.steps() {
            let (next, d, c) = model::transition(state, counters, step, rng, model)?;
            state = next;
            counters = c;
            minutes += d;
        }
        let Some(m) = node.measurement else {
            let success = node.leaf.is_none_or(|l| l.success);
            let outcome = if success { Outcome::Completed } else { Outcome::Dangling };
            return Ok((outcome, path, minutes, state));
        };
        model.check_legal(m.into(), &counters)?;
        let (reading, d) = model::measure(&state, m, rng, model)?;
        minutes += d;
        match node.branches.iter().position(|b| b.contains(reading)) {
            Some(i) => {
                path.push(i);
                node = &node.branches[i].child;
            }
            None => return Ok((Outcome::OutOfPlan, path, minutes, state)),
        }
    }
}

/// Sample `n_states` initial states and run the plan on each. State `i`
/// draws from its own stream `derive_seed(seed, i)`, so two plans evaluated
/// with the same seed see the same initial states.
pub fn evaluate_plan(
    plan: &PlanTree,
    initial: &InitialBelief,
    n_states: usize,
    model: &ProcessConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    initial.validate()?;
    let leaves = leaf_paths(&plan.root);
    let mut per_leaf: Vec<Vec<f64>> = vec![Vec::new(); leaves.len()];
    let mut states = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let s0 = initial.sample(&mut rng);
        let (outcome, path, minutes, end) = execute_plan(plan, s0, model, &mut rng)?;
        let leaf = if outcome == Outcome::OutOfPlan {
            None
        } else {
            leaves.iter().position(|(p, _, _)| *p == path)
        };
        if outcome == Outcome::Completed {
            if let Some(l) = leaf {
                per_leaf[l].push(minutes);
            }
        }
        states.push(StateResult {
            outcome,
            leaf,
            duration_min: minutes,
            in_target: model::in_target(&end, model),
        });
    }
    let n = n_states.max(1) as f64;
    let count = |o: Outcome| states.iter().filter(|s| s.outcome == o).count() as f64;
    let branches = leaves
        .iter()
        .enumerate()
        .filter(|(_, (_, _, node))| node.leaf.is_none_or(|l| l.success))
        .map(|(i, (path, label, node))| {
            let d = &per_leaf[i];
            let (planned_share, planned_duration_min) =
                node.leaf.map_or((f64::NAN, f64::NAN), |l| (l.share, l.total_duration_min));
            BranchReport {
                leaf: i,
                path: path.clone(),
                label: label.clone(),
                success: true,
                planned_share,
                planned_duration_min,
                share: d.len() as f64 / n,
                mean_duration_min: (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64),
                min_duration_min: d.iter().copied().reduce(f64::min),
                max_duration_min: d.iter().copied().reduce(f64::max),
            }
        })
        .collect();
    let durations: Vec<f64> = states.iter().map(|s| s.duration_min).collect();
    Ok(EvaluationReport {
        n_states,
        mean_duration_min: durations.iter().sum::<f64>() / n,
        max_duration_min: durations.iter().copied().fold(0.0, f64::max),
        failure_rate: (count(Outcome::Dangling) + count(Outcome::OutOfPlan)) / n,
        out_of_plan_rate: count(Outcome::OutOfPlan) / n,
        in_target_rate: states.iter().filter(|s| s.in_target).count() as f64 / n,
        branches,
        states,
    })
}

/// Percentile bootstrap interval for the mean of `samples`.
pub fn bootstrap_mean_ci(samples: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert!(!samples.is_empty() && resamples > 0 && level > 0.0 && level < 1.0);
    let mut rng = rng_from_seed(seed);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    (at(tail), at(1.0 - tail))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benchmark(model: &ProcessConfig) -> PlanTree {
        PlanTree::from_chain("MRF*13, Interferometry, SLS, CCP2*8, CCP3*1, Interferometry, SLS", model).unwrap()
    }

    #[test]
    fn deterministic_chain_matches_closed_form() {
        let model = ProcessConfig::table1().with_alpha(0.0);
        let plan = benchmark(&model);
        let init = InitialBelief::PointMass { shape_nm: 150.0, roughness_nm: 2.8 };
        let r = evaluate_plan(&plan, &init, 20, &model, 1).unwrap();
        assert_eq!(r.branches.len(), 1);
        assert_eq!(r.branches[0].share, 1.0);
        assert_eq!(r.failure_rate, 0.0);
        let expected = 600.0 + 240.0 + 11.0 * 300.0 + 600.0 + 7.0 * 480.0 + 600.0 + 2.0 * 277.5;
        assert!((r.mean_duration_min - expected).abs() < 1e-9);
        assert_eq!(r.max_duration_min, r.mean_duration_min);
    }

    #[test]
    fn shares_partition_with_failures() {
        let model = ProcessConfig::table1();
        let mut plan = benchmark(&model);
        // restrict the first SLS branch so that some readings leave the plan
        let sls = &mut plan.root.branches[0].child;
        sls.branches[0].bin_high = Some(0.5);
        let init = InitialBelief::PointMass { shape_nm: 150.0, roughness_nm: 2.8 };
        let r = evaluate_plan(&plan, &init, 500, &model, 2).unwrap();
        let total: f64 = r.branches.iter().map(|b| b.share).sum();
        assert!((total + r.failure_rate - 1.0).abs() < 1e-12);
        assert!(r.out_of_plan_rate > 0.0);
        assert!(r.branches_csv().lines().count() == 2);
    }

    #[test]
    fn same_seed_same_report() {
        let model = ProcessConfig::table1();
        let plan = benchmark(&model);
        let init = InitialBelief::PointMass { shape_nm: 150.0, roughness_nm: 2.8 };
        let a = evaluate_plan(&plan, &init, 50, &model, 9).unwrap();
        let b = evaluate_plan(&plan, &init, 50, &model, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, 1000, 0.95, 4);
        assert!(lo < 99.5 && 99.5 < hi);
        assert!(hi - lo < 30.0);
    }
}
