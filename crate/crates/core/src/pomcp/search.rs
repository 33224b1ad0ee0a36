use log::{debug, info, log_enabled, trace, Level};

use super::{backup, extract_plan_with, select_child_ucb, NodeId, PlanTree, SearchConfig, SearchTree};
use crate::belief::BeliefState;
use crate::error::Result;
use crate::model::ProcessConfig;

/// Run `cfg.iterations` simulations from the root of a fresh tree.
pub fn search(root_belief: BeliefState, cfg: &SearchConfig, model: &ProcessConfig) -> Result<SearchTree> {
    let mut tree = SearchTree::new(root_belief, model, cfg)?;
    let root = tree.root();
    run(&mut tree, root, cfg.iterations)?;
    Ok(tree)
}

/// Run `iterations` simulations with `start` as the search root.
pub fn run(tree: &mut SearchTree, start: NodeId, iterations: u64) -> Result<()> {
    for _ in 0..iterations {
        simulate(tree, start)?;
    }
    Ok(())
}

/// One POMCP simulation: descend by UCB, expand one action, roll out, back up.
pub fn simulate(tree: &mut SearchTree, start: NodeId) -> Result<()> {
    let c = tree.config().exploration_c;
    let horizon = tree.config().rollout_horizon;
    let mut path = vec![start];
    let mut cur = start;
    let ret = loop {
        let node = tree.node(cur);
        if node.is_measurement() {
            cur = tree.sample_observation(cur);
            path.push(cur);
            continue;
        }
        if node.terminal {
            break 0.0;
        }
        if node.depth >= horizon {
            break tree.failure_penalty();
        }
        let mut expanded = None;
        while let Some(action) = tree.next_untried(cur) {
            if let Some(id) = tree.expand(cur, action)? {
                expanded = Some(id);
                break;
            }
        }
        if let Some(id) = expanded {
            path.push(id);
            let leaf = if tree.node(id).is_measurement() {
                let obs = tree.sample_observation(id);
                path.push(obs);
                obs
            } else {
                id
            };
            break tree.rollout_from(leaf)?;
        }
        match select_child_ucb(tree, cur, c) {
            Some(child) => {
                path.push(child);
                cur = child;
            }
            // nothing legal or informative left to do here
            None => break tree.failure_penalty(),
        }
    };
    backup(tree, &path, ret);
    Ok(())
}

/// Upper bound on extra simulation rounds spent on under-visited children per commit.
const MAX_VERIFICATIONS: usize = 8;

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub tree: SearchTree,
    pub plan: PlanTree,
    /// Total simulations run over all committed nodes.
    pub simulations: u64,
    /// Plan nodes where no acceptable continuation was found.
    pub dead_ends: usize,
}

/// Search from the root, then commit the best action and search again from
/// every node the plan reaches, keeping all observation branches of chosen
/// measurements. Non-chosen subtrees are discarded as the plan is fixed.
///
/// Commits use [`SearchTree::plan_values`] rather than plain means: every
/// fresh node spends one simulation on each untried action, and when such an
/// action is a guaranteed failure its return drowns the small differences
/// between good actions in the means. The same contamination can starve a
/// good child of visits, so a child whose value beats every eligible
/// sibling first gets simulations rooted at itself.
///
/// A node becomes a dead end when no child reaches `plan_min_visits` or the
/// best child's value is no better than the failure penalty, i.e. every
/// line through it runs out of horizon.
pub fn optimize(root_belief: BeliefState, cfg: &SearchConfig, model: &ProcessConfig) -> Result<OptimizeOutcome> {
    let mut tree = SearchTree::new(root_belief, model, cfg)?;
    let root = tree.root();
    run(&mut tree, root, cfg.iterations)?;
    let mut simulations = cfg.iterations;
    let mut dead_ends = 0;
    let dead_value = tree.failure_penalty();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        if node.terminal {
            tree.release_belief(id);
            continue;
        }
        if node.depth >= cfg.rollout_horizon {
            tree.prune_except(id, None);
            tree.release_belief(id);
            dead_ends += 1;
            continue;
        }
        if id != root {
            run(&mut tree, id, cfg.replan_iterations())?;
            simulations += cfg.replan_iterations();
        }
        // a promising child that UCB starved gets its own simulations before we decide
        let mut values = tree.plan_values(1);
        for _ in 0..MAX_VERIFICATIONS {
            let promising = tree.best_action_by(id, 1, &values);
            let eligible = tree.best_action_by(id, cfg.plan_min_visits, &values);
            let Some(p) = promising.filter(|p| Some(*p) != eligible) else { break };
            let budget = (cfg.replan_iterations() / 4).max(cfg.plan_min_visits);
            run(&mut tree, p, budget)?;
            simulations += budget;
            values = tree.plan_values(1);
        }
        if log_enabled!(Level::Trace) {
            for &c in tree.children(id) {
                let n = tree.node(c);
                trace!(
                    "  {:<14} Q={:>9.4} V={:>9.4} N={}",
                    n.action().map_or("?", |a| a.name()),
                    values[c.0],
                    n.value(),
                    n.visits
                );
            }
        }
        let best = tree
            .best_action_by(id, cfg.plan_min_visits, &values)
            .filter(|b| values[b.0] > dead_value);
        tree.prune_except(id, best);
        // later searches start from these nodes, whose beliefs derive from `id`
        if let Some(b) = best {
            if tree.node(b).is_measurement() {
                for c in tree.children(b).to_vec() {
                    tree.pin(c)?;
                }
            } else {
                tree.pin(b)?;
            }
        }
        tree.release_belief(id);
        let Some(best) = best else {
            debug!("dead end at depth {}", tree.node(id).depth);
            dead_ends += 1;
            continue;
        };
        let chosen = tree.node(best);
        debug!(
            "depth {}: commit {} (Q={:.4}, V={:.4}, N={})",
            chosen.depth,
            chosen.action().map_or("?", |a| a.name()),
            values[best.0],
            chosen.value(),
            chosen.visits
        );
        if chosen.is_measurement() {
            // push in reverse so the lowest bin is planned first
            stack.extend(chosen.children.iter().rev().copied());
        } else {
            stack.push(best);
        }
    }
    let plan = extract_plan_with(&tree, cfg.plan_min_visits, true)?;
    info!(
        "optimize: {simulations} simulations, {} nodes, {dead_ends} dead ends",
        tree.len()
    );
    Ok(OptimizeOutcome { tree, plan, simulations, dead_ends })
}
