use rand::Rng;

use super::{is_terminal, SearchConfig};
use crate::belief::{self, BeliefState, History, ObservationBin};
use crate::error::{Error, Result};
use crate::model::{self, Action, CycleCounters, ProcessConfig};
use crate::sampling::{derive_seed, rng_from_seed, SimRng};

/// Lower bound on cache capacity, whatever the particle budget.
const MIN_CACHED_BELIEFS: usize = 64;
const NODE_SEED_SALT: u64 = 0x6e6f_6465_7365_6564;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Root,
    /// Reached by taking an action. For a measurement this node holds no
    /// particles itself; its children are the observation nodes.
    Action(Action),
    Observation(ObservationBin),
}

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    /// Actions taken since the start of production.
    pub depth: usize,
    pub visits: u64,
    /// Sum of share-weighted returns (each observation crossing scales by the share ratio).
    pub total_value: f64,
    /// Sum of plain per-simulation returns. Observation children are sampled in
    /// proportion to their share, so this mean already weights branches by share.
    pub total_return: f64,
    /// Fraction of the tree root's particles that reach this node.
    pub share: f64,
    /// Minutes spent on the incoming action edge (zero for observation edges).
    pub edge_minutes: f64,
    pub edge_reward: f64,
    pub terminal: bool,
    pub counters: CycleCounters,
    pub children: Vec<NodeId>,
    /// Set once the node was committed or discarded; it is never expanded again.
    pub closed: bool,
    /// Seeds the draws that produced this node's particles, so an evicted
    /// belief can be rebuilt bit-identically from its parent.
    seed: u64,
    belief: Option<BeliefState>,
    last_used: u64,
    /// Pinned beliefs are never evicted from the cache.
    pinned: bool,
}

impl SearchNode {
    /// Mean return, used by the tree policy and plan extraction.
    pub fn value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_return / self.visits as f64
        }
    }

    /// Mean share-weighted return `V = total_value / N`.
    pub fn weighted_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_value / self.visits as f64
        }
    }

    /// Particles of this node if currently cached; see [`SearchTree::belief`].
    pub fn belief(&self) -> Option<&BeliefState> {
        self.belief.as_ref()
    }

    pub fn action(&self) -> Option<Action> {
        match self.kind {
            NodeKind::Action(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_measurement(&self) -> bool {
        self.action().is_some_and(Action::is_measurement)
    }

    /// Nodes that carry a belief and choose among actions.
    pub fn is_decision(&self) -> bool {
        !self.is_measurement()
    }
}

/// Arena-backed search tree. Owns its random stream so that repeated runs
/// from the same seed are bit-identical.
///
/// Beliefs are held in a least-recently-used cache bounded by
/// `cfg.belief_cache_particles`. An evicted belief is rebuilt on demand from
/// the nearest cached ancestor using the per-node seeds, so eviction never
/// changes results.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    model: ProcessConfig,
    cfg: SearchConfig,
    penalty: f64,
    pub(crate) rng: SimRng,
    root_history: History,
    clock: u64,
    live: usize,
    max_live: usize,
}

impl SearchTree {
    pub fn new(root_belief: BeliefState, model: &ProcessConfig, cfg: &SearchConfig) -> Result<Self> {
        model.validate()?;
        cfg.validate(model)?;
        if root_belief.is_empty() {
            return Err(Error::InvalidSpec("root belief has no particles".into()));
        }
        let root = SearchNode {
            kind: NodeKind::Root,
            parent: None,
            depth: root_belief.history.len(),
            visits: 0,
            total_value: 0.0,
            total_return: 0.0,
            share: 1.0,
            edge_minutes: 0.0,
            edge_reward: 0.0,
            terminal: is_terminal(&root_belief, model),
            counters: root_belief.counters,
            children: Vec::new(),
            closed: false,
            seed: 0,
            belief: None,
            last_used: 0,
            pinned: true,
        };
        let per_belief = root_belief.len() as u64;
        let mut tree = Self {
            nodes: vec![root],
            model: model.clone(),
            cfg: cfg.clone(),
            penalty: cfg.failure_penalty(model),
            rng: rng_from_seed(cfg.rng_seed),
            root_history: root_belief.history.clone(),
            clock: 0,
            live: 0,
            max_live: ((cfg.belief_cache_particles / per_belief) as usize).max(MIN_CACHED_BELIEFS),
        };
        tree.store(NodeId(0), root_belief);
        Ok(tree)
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn model(&self) -> &ProcessConfig {
        &self.model
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    pub fn failure_penalty(&self) -> f64 {
        self.penalty
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    /// Legal actions at a decision node, in enumeration order.
    pub fn legal_actions(&self, id: NodeId) -> Vec<Action> {
        self.model.legal_actions(&self.nodes[id.0].counters)
    }

    /// The next action not yet expanded at `id`, if any.
    pub fn next_untried(&self, id: NodeId) -> Option<Action> {
        let node = &self.nodes[id.0];
        if node.closed || node.terminal || !node.is_decision() {
            return None;
        }
        let tried: Vec<Action> = node
            .children
            .iter()
            .filter_map(|c| self.nodes[c.0].action())
            .collect();
        self.legal_actions(id).into_iter().find(|a| !tried.contains(a))
    }

    fn push(&mut self, node: SearchNode) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn next_seed(&self) -> u64 {
        derive_seed(self.cfg.rng_seed ^ NODE_SEED_SALT, self.nodes.len() as u64)
    }

    /// History of the belief the tree was built from.
    pub fn root_history(&self) -> &History {
        &self.root_history
    }

    fn touch(&mut self, id: NodeId) {
        self.clock += 1;
        self.nodes[id.0].last_used = self.clock;
    }

    fn store(&mut self, id: NodeId, belief: BeliefState) {
        if self.nodes[id.0].belief.replace(belief).is_none() {
            self.live += 1;
        }
        self.touch(id);
        if self.live > self.max_live {
            self.evict();
        }
    }

    fn drop_belief(&mut self, id: NodeId) {
        let node = &mut self.nodes[id.0];
        node.pinned = false;
        if node.belief.take().is_some() {
            self.live -= 1;
        }
    }

    /// Evict the least recently used unpinned beliefs down to three quarters of capacity.
    fn evict(&mut self) {
        let mut cached: Vec<(u64, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.belief.is_some() && !n.pinned)
            .map(|(i, n)| (n.last_used, i))
            .collect();
        cached.sort_unstable();
        let excess = self.live.saturating_sub(self.max_live * 3 / 4);
        for &(_, i) in cached.iter().take(excess) {
            self.nodes[i].belief = None;
            self.live -= 1;
        }
    }

    /// The decision node whose particles `id`'s particles derive from.
    fn belief_parent(&self, id: NodeId) -> Option<NodeId> {
        let parent = self.nodes[id.0].parent?;
        match self.nodes[id.0].kind {
            NodeKind::Observation(_) => self.nodes[parent.0].parent,
            _ => Some(parent),
        }
    }

    /// Particles of decision node `id`, rebuilt from the nearest cached
    /// ancestor if they were evicted.
    pub fn belief(&mut self, id: NodeId) -> Result<BeliefState> {
        let mut chain = Vec::new();
        let mut cur = id;
        while self.nodes[cur.0].belief.is_none() {
            if self.nodes[cur.0].closed || !self.nodes[cur.0].is_decision() {
                return Err(Error::InvalidState("belief of a closed node was released".into()));
            }
            chain.push(cur);
            cur = self
                .belief_parent(cur)
                .ok_or_else(|| Error::InvalidState("root belief was released".into()))?;
        }
        let mut belief = self.nodes[cur.0].belief.clone().expect("cached");
        self.touch(cur);
        for &n in chain.iter().rev() {
            belief = self.regenerate(n, &belief)?;
            self.store(n, belief.clone());
        }
        Ok(belief)
    }

    fn regenerate(&self, id: NodeId, from: &BeliefState) -> Result<BeliefState> {
        let node = &self.nodes[id.0];
        match node.kind {
            NodeKind::Action(Action::Processing(step)) => {
                let mut rng = rng_from_seed(node.seed);
                Ok(belief::propagate(from, step, &mut rng, &self.model)?.0)
            }
            NodeKind::Observation(bin) => {
                let meas = &self.nodes[node.parent.expect("observation has a parent").0];
                let Some(Action::Measurement(step)) = meas.action() else {
                    return Err(Error::InvalidState("observation below a non-measurement".into()));
                };
                let mut rng = rng_from_seed(meas.seed);
                let split = belief::split_by_measurement(from, step, &mut rng, &self.cfg.binning, &self.model)?;
                split
                    .branches
                    .into_iter()
                    .find(|b| b.bin == bin)
                    .map(|b| b.belief)
                    .ok_or_else(|| Error::InvalidState("observation bin vanished on rebuild".into()))
            }
            _ => Err(Error::InvalidState("cannot rebuild this node's belief".into())),
        }
    }

    /// Keep the belief of `id` cached until it is released.
    pub fn pin(&mut self, id: NodeId) -> Result<()> {
        self.belief(id)?;
        self.nodes[id.0].pinned = true;
        Ok(())
    }

    /// Expand `action` below decision node `parent`.
    ///
    /// A processing action propagates the particles. A measurement creates
    /// the action node plus one observation child per non-empty bin.
    /// Returns `Ok(None)` when the action is skipped: an uninformative
    /// measurement, or a processing step that leaves the roughness target
    /// out of reach for every particle.
    pub fn expand(&mut self, parent: NodeId, action: Action) -> Result<Option<NodeId>> {
        if !self.nodes[parent.0].is_decision() {
            return Err(Error::InvalidState("only belief nodes can be expanded".into()));
        }
        let belief = self.belief(parent)?;
        let p = &self.nodes[parent.0];
        let (depth, share) = (p.depth, p.share);
        let seed = self.next_seed();
        match action {
            Action::Processing(step) => {
                let (next, minutes) = belief::propagate(&belief, step, &mut rng_from_seed(seed), &self.model)?;
                let dead = self.cfg.prune_dead_ends
                    && next
                        .particles()
                        .iter()
                        .all(|s| !self.model.roughness_reachable(s.roughness_sigma, &next.counters));
                let node = SearchNode {
                    kind: NodeKind::Action(action),
                    parent: Some(parent),
                    depth: depth + 1,
                    visits: 0,
                    total_value: 0.0,
                    total_return: 0.0,
                    share,
                    edge_minutes: minutes,
                    edge_reward: model::reward(minutes, &self.model),
                    terminal: is_terminal(&next, &self.model),
                    counters: next.counters,
                    children: Vec::new(),
                    closed: dead,
                    seed,
                    belief: None,
                    last_used: 0,
                    pinned: false,
                };
                let id = self.push(node);
                self.nodes[parent.0].children.push(id);
                if dead {
                    return Ok(None);
                }
                self.store(id, next);
                Ok(Some(id))
            }
            Action::Measurement(step) => {
                let split = belief::split_by_measurement(
                    &belief,
                    step,
                    &mut rng_from_seed(seed),
                    &self.cfg.binning,
                    &self.model,
                )?;
                // one bin tells nothing new unless it is the first confirmation of its metric
                let informative = split.branches.len() > 1 || {
                    let bin = split.branches[0].bin;
                    let (shape_ok, roughness_ok) = belief.history.confirmations(&self.model);
                    let already = match bin.metric {
                        model::Metric::Shape => shape_ok,
                        model::Metric::Roughness => roughness_ok,
                    };
                    bin.at_or_below(self.model.target(bin.metric)) && !already
                };
                let skip = self.cfg.prune_uninformative_measurements && !informative;
                let meas = SearchNode {
                    kind: NodeKind::Action(action),
                    parent: Some(parent),
                    depth: depth + 1,
                    visits: 0,
                    total_value: 0.0,
                    total_return: 0.0,
                    share,
                    edge_minutes: split.duration,
                    edge_reward: model::reward(split.duration, &self.model),
                    terminal: false,
                    counters: belief.counters,
                    children: Vec::new(),
                    closed: skip,
                    seed,
                    belief: None,
                    last_used: 0,
                    pinned: false,
                };
                let meas_id = self.push(meas);
                self.nodes[parent.0].children.push(meas_id);
                if skip {
                    return Ok(None);
                }
                for branch in split.branches {
                    let obs = SearchNode {
                        kind: NodeKind::Observation(branch.bin),
                        parent: Some(meas_id),
                        depth: depth + 1,
                        visits: 0,
                        total_value: 0.0,
                        total_return: 0.0,
                        share: share * branch.share,
                        edge_minutes: 0.0,
                        edge_reward: 0.0,
                        terminal: is_terminal(&branch.belief, &self.model),
                        counters: branch.belief.counters,
                        children: Vec::new(),
                        closed: false,
                        seed: 0,
                        belief: None,
                        last_used: 0,
                        pinned: false,
                    };
                    let id = self.push(obs);
                    self.nodes[meas_id.0].children.push(id);
                    self.store(id, branch.belief);
                }
                Ok(Some(meas_id))
            }
        }
    }

    /// Pick an observation child of a measurement node proportionally to its particle share.
    pub fn sample_observation(&mut self, meas: NodeId) -> NodeId {
        let node = &self.nodes[meas.0];
        let children = &node.children;
        let u: f64 = self.rng.random::<f64>() * node.share;
        let mut acc = 0.0;
        for c in children {
            acc += self.nodes[c.0].share;
            if u < acc {
                return *c;
            }
        }
        *children.last().expect("measurement node without observations")
    }

    /// Child actions that can be chosen at `id`: skipped measurements and
    /// pruned dead ends are left out.
    pub fn selectable_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes[id.0]
            .children
            .iter()
            .copied()
            .filter(|c| {
                let n = &self.nodes[c.0];
                !(n.is_measurement() && n.children.is_empty()) && !(n.closed && n.children.is_empty())
            })
    }

    /// Highest-valued action child with at least `min_visits` visits; ties go
    /// to the earlier action in enumeration order.
    pub fn best_action(&self, id: NodeId, min_visits: u64) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64, usize)> = None;
        for c in self.selectable_children(id) {
            let n = &self.nodes[c.0];
            if n.visits < min_visits.max(1) {
                continue;
            }
            let v = n.value();
            let ord = n.action().map_or(usize::MAX, Action::ordinal);
            let better = match best {
                None => true,
                Some((_, bv, bo)) => v > bv || (v == bv && ord < bo),
            };
            if better {
                best = Some((c, v, ord));
            }
        }
        best.map(|(c, _, _)| c)
    }

    /// Expectimax values over the expanded tree, indexed by node id.
    ///
    /// A decision node takes its incoming reward plus the best value among
    /// children with at least `min_visits` visits; a measurement node takes the
    /// share-weighted sum over its observations. Nodes without eligible
    /// children fall back to their mean return. Children always have larger
    /// ids than their parents, so one reverse pass suffices.
    pub fn plan_values(&self, min_visits: u64) -> Vec<f64> {
        let mut q = vec![0.0; self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            let edge = if i == 0 { 0.0 } else { n.edge_reward };
            let mean_future = n.value() - edge;
            let future = if n.terminal {
                0.0
            } else if n.is_measurement() {
                if n.children.is_empty() || n.children.iter().any(|c| self.nodes[c.0].visits == 0) {
                    mean_future
                } else {
                    n.children
                        .iter()
                        .map(|c| self.nodes[c.0].share / n.share * q[c.0])
                        .sum()
                }
            } else {
                self.selectable_children(NodeId(i))
                    .filter(|c| self.nodes[c.0].visits >= min_visits.max(1))
                    .map(|c| q[c.0])
                    .reduce(f64::max)
                    .unwrap_or(mean_future)
            };
            q[i] = edge + future;
        }
        q
    }

    /// Child of `id` with the highest expectimax value among those with at
    /// least `min_visits` visits; ties go to the earlier action.
    pub fn best_action_by(&self, id: NodeId, min_visits: u64, values: &[f64]) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64, usize)> = None;
        for c in self.selectable_children(id) {
            let n = &self.nodes[c.0];
            if n.visits < min_visits.max(1) {
                continue;
            }
            let v = values[c.0];
            let ord = n.action().map_or(usize::MAX, Action::ordinal);
            if best.is_none_or(|(_, bv, bo)| v > bv || (v == bv && ord < bo)) {
                best = Some((c, v, ord));
            }
        }
        best.map(|(c, _, _)| c)
    }

    /// Rollout return from a decision node, using one particle drawn uniformly.
    pub(crate) fn rollout_from(&mut self, id: NodeId) -> Result<f64> {
        let node = &self.nodes[id.0];
        if node.terminal {
            return Ok(0.0);
        }
        if node.depth >= self.cfg.rollout_horizon {
            return Ok(self.penalty);
        }
        let belief = self.belief(id)?;
        let node = &self.nodes[id.0];
        let particle = belief.particles()[self.rng.random_range(0..belief.len())];
        let (shape_confirmed, roughness_confirmed) = belief.history.confirmations(&self.model);
        let start = super::RolloutStart {
            steps_left: self.cfg.rollout_horizon - node.depth,
            shape_confirmed,
            roughness_confirmed,
        };
        let counters = node.counters;
        Ok(super::rollout(particle, counters, start, &self.model, self.penalty, &mut self.rng))
    }

    /// Drop the particles of `id` and unpin it; statistics and cached flags stay.
    pub fn release_belief(&mut self, id: NodeId) {
        self.drop_belief(id);
    }

    /// Discard every action child of `id` except `keep`, freeing their subtrees,
    /// and close `id` to further expansion.
    pub fn prune_except(&mut self, id: NodeId, keep: Option<NodeId>) {
        let children = std::mem::take(&mut self.nodes[id.0].children);
        let mut kept = Vec::new();
        for c in children {
            if Some(c) == keep {
                kept.push(c);
            } else {
                self.discard(c);
            }
        }
        self.nodes[id.0].children = kept;
        self.nodes[id.0].closed = true;
    }

    fn discard(&mut self, id: NodeId) {
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            self.drop_belief(n);
            let node = &mut self.nodes[n.0];
            node.closed = true;
            stack.append(&mut node.children);
        }
    }

    /// Number of nodes currently holding particles.
    pub fn live_beliefs(&self) -> usize {
        self.live
    }
}

/// Propagate a simulation result from the last node of `path` back to its first.
///
/// Each node adds the return accumulated below it plus the reward of its own
/// incoming edge, and its visit count grows by one. Moving from an
/// observation node to its measurement node scales the carried return by
/// `share(child) / share(parent)`.
pub fn backup(tree: &mut SearchTree, path: &[NodeId], rollout_return: f64) {
    let mut carried = rollout_return;
    let mut plain = rollout_return;
    for i in (0..path.len()).rev() {
        let id = path[i];
        let node = &mut tree.nodes[id.0];
        // a re-rooted search keeps the incoming edge reward so values stay comparable
        if id != NodeId(0) {
            carried += node.edge_reward;
            plain += node.edge_reward;
        }
        node.total_value += carried;
        node.total_return += plain;
        node.visits += 1;
        if i > 0 {
            if let NodeKind::Observation(_) = node.kind {
                let child_share = node.share;
                let parent_share = tree.nodes[path[i - 1].0].share;
                carried *= child_share / parent_share;
            }
        }
    }
}
