//! Offline POMCP over particle beliefs.
//!
//! The search tree alternates belief nodes and action edges. Processing edges
//! lead straight to the propagated belief; a measurement edge leads to an
//! action node whose children are the non-empty observation bins, each holding
//! its part of the particles. Values flowing up through an observation node
//! are scaled by that node's particle share relative to its parent, so an
//! action followed by observations is credited in proportion to how many
//! particles took each branch.

mod evaluate;
mod plan;
mod policy;
mod search;
mod tree;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, Binning};
use crate::error::{Error, Result};
use crate::model::ProcessConfig;

pub use evaluate::{bootstrap_mean_ci, evaluate_plan, execute_plan, BranchReport, EvaluationReport, Outcome, StateResult};
pub use plan::{extract_plan, extract_plan_with, PlanBranch, PlanLeaf, PlanNode, PlanTree, RunEntry, Targets, PLAN_FORMAT};
pub use policy::{
    ccp2_cycles_needed, chain_gate, default_policy, expert_choice, p_mrf, rollout, select_child_ucb,
    ucb_score, ucb_select, ExpertChoice, RolloutStart,
};
pub use search::{optimize, run, search, simulate, OptimizeOutcome};
pub use tree::{backup, NodeId, NodeKind, SearchNode, SearchTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Simulations run from the root.
    pub iterations: u64,
    /// Simulations run from every later plan node when re-rooting; defaults to `iterations`.
    #[serde(default)]
    pub replan_iterations: Option<u64>,
    pub exploration_c: f64,
    /// Maximum number of steps in a simulated episode, counted from the start
    /// of production (tree depth plus rollout length).
    pub rollout_horizon: usize,
    /// Reward added when an episode hits the horizon; defaults to
    /// `2 * horizon * reward(longest step)`.
    #[serde(default)]
    pub failure_penalty: Option<f64>,
    pub binning: Binning,
    pub plan_min_visits: u64,
    pub rng_seed: u64,
    /// Skip measurements whose readings all fall into one non-confirming bin.
    #[serde(default = "default_true")]
    pub prune_uninformative_measurements: bool,
    /// Skip processing steps after which no particle can reach the roughness
    /// target any more (see [`ProcessConfig::roughness_reachable`]).
    #[serde(default = "default_true")]
    pub prune_dead_ends: bool,
    /// Upper bound on particles held by cached beliefs across the tree.
    #[serde(default = "default_belief_cache")]
    pub belief_cache_particles: u64,
}

fn default_belief_cache() -> u64 {
    50_000_000
}

fn default_true() -> bool {
    true
}

impl SearchConfig {
    pub fn new(binning: Binning) -> Self {
        Self {
            iterations: 10_000,
            replan_iterations: None,
            exploration_c: 1.0,
            rollout_horizon: 60,
            failure_penalty: None,
            binning,
            plan_min_visits: 10,
            rng_seed: 0,
            prune_uninformative_measurements: true,
            prune_dead_ends: true,
            belief_cache_particles: default_belief_cache(),
        }
    }

    pub fn failure_penalty(&self, model: &ProcessConfig) -> f64 {
        self.failure_penalty.unwrap_or_else(|| {
            2.0 * self.rollout_horizon as f64 * crate::model::reward(model.longest_step_minutes(), model)
        })
    }

    pub fn replan_iterations(&self) -> u64 {
        self.replan_iterations.unwrap_or(self.iterations)
    }

    pub fn validate(&self, model: &ProcessConfig) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("search.iterations", "must be >= 1"));
        }
        if self.replan_iterations == Some(0) {
            return Err(Error::config("search.replan_iterations", "must be >= 1"));
        }
        if self.rollout_horizon < 1 {
            return Err(Error::config("search.rollout_horizon", "must be >= 1"));
        }
        if !(self.exploration_c >= 0.0) {
            return Err(Error::config("search.exploration_c", "must be >= 0"));
        }
        if let Some(p) = self.failure_penalty {
            if !(p <= 0.0) {
                return Err(Error::config("search.failure_penalty", "must be <= 0"));
            }
        }
        let b = Binning::new(
            self.binning.shape_edges_nm.clone(),
            self.binning.roughness_edges_nm.clone(),
        )?;
        b.check_targets(model)?;
        Ok(())
    }
}

/// A belief is terminal when every particle is within target and, if the
/// model asks for it, both metrics were confirmed by measurements taken since
/// the last processing step.
pub fn is_terminal(belief: &BeliefState, model: &ProcessConfig) -> bool {
    if !belief.all_in_target(model) {
        return false;
    }
    if !model.terminal_requires_measurements {
        return true;
    }
    let (shape, roughness) = belief.history.confirmations(model);
    shape && roughness
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{split_by_measurement, Binning};
    use crate::model::{CycleCounters, MeasurementStep, QualityState};
    use crate::sampling::rng_from_seed;

    fn in_target_belief() -> BeliefState {
        BeliefState::from_particles(vec![QualityState::new(10.0, 0.4); 4], CycleCounters::default())
            .unwrap()
    }

    #[test]
    fn terminal_needs_confirming_measurements() {
        let model = ProcessConfig::table1().with_alpha(0.0);
        let binning = Binning::at_targets(&model);
        let mut rng = rng_from_seed(0);
        let b = in_target_belief();
        assert!(!is_terminal(&b, &model));
        let after_sls = split_by_measurement(&b, MeasurementStep::Sls, &mut rng, &binning, &model)
            .unwrap()
            .branches
            .remove(0)
            .belief;
        assert!(!is_terminal(&after_sls, &model));
        let after_both = split_by_measurement(
            &after_sls,
            MeasurementStep::Deflectometry,
            &mut rng,
            &binning,
            &model,
        )
        .unwrap()
        .branches
        .remove(0)
        .belief;
        assert!(is_terminal(&after_both, &model));
    }

    #[test]
    fn out_of_target_particle_blocks_terminal() {
        let model = ProcessConfig::table1().with_alpha(0.0);
        let binning = Binning::at_targets(&model);
        let mut rng = rng_from_seed(0);
        let mut particles = vec![QualityState::new(10.0, 0.4); 3];
        particles.push(QualityState::new(10.0, 0.55));
        let b = BeliefState::from_particles(particles, CycleCounters::default()).unwrap();
        let mut cur = b;
        for m in [MeasurementStep::Deflectometry, MeasurementStep::Sls] {
            cur = split_by_measurement(&cur, m, &mut rng, &binning, &model)
                .unwrap()
                .branches
                .remove(0)
                .belief;
        }
        // the SLS split isolates the rough particle, so force the mixed case:
        let (shape, roughness) = cur.history.confirmations(&model);
        assert!(shape && roughness);
        let mut mixed = BeliefState::from_particles(
            vec![QualityState::new(10.0, 0.4), QualityState::new(10.0, 0.55)],
            CycleCounters::default(),
        )
        .unwrap();
        mixed.history = cur.history.clone();
        assert!(!is_terminal(&mixed, &model));
        assert!(is_terminal(&cur, &model));
    }

    #[test]
    fn terminal_without_measurement_requirement() {
        let mut model = ProcessConfig::table1();
        model.terminal_requires_measurements = false;
        assert!(is_terminal(&in_target_belief(), &model));
    }

    #[test]
    fn config_validation() {
        let model = ProcessConfig::table1();
        let mut cfg = SearchConfig::new(Binning::at_targets(&model));
        cfg.validate(&model).unwrap();
        cfg.iterations = 0;
        assert!(cfg.validate(&model).unwrap_err().to_string().contains("iterations"));
        cfg.iterations = 1;
        cfg.binning = Binning { shape_edges_nm: vec![12.0], roughness_edges_nm: vec![0.5] };
        assert!(cfg.validate(&model).is_err());
        let cfg = SearchConfig { failure_penalty: Some(1.0), ..SearchConfig::new(Binning::at_targets(&model)) };
        assert!(cfg.validate(&model).is_err());
    }

    #[test]
    fn default_penalty_scales_with_horizon() {
        let model = ProcessConfig::table1();
        let cfg = SearchConfig { rollout_horizon: 10, ..SearchConfig::new(Binning::at_targets(&model)) };
        assert!((cfg.failure_penalty(&model) + 2.0 * 10.0 * 0.66).abs() < 1e-12);
    }
}
