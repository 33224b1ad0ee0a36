//! Branched plan extracted from a search tree.
//!
//! A plan node is a run of processing steps followed by at most one
//! measurement; its branches are the observation bins of that measurement.
//! A node without a measurement is a leaf.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeId, NodeKind, SearchTree};
use crate::belief::{Binning, History, HistoryEntry, ObservationBin};
use crate::error::{Error, Result};
use crate::model::{Action, MeasurementStep, Metric, ProcessConfig, ProcessingStep};

pub const PLAN_FORMAT: &str = "polishplan.plan/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEntry {
    pub action: ProcessingStep,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub shape_nm: f64,
    pub roughness_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanBranch {
    pub bin_low: f64,
    /// `None` for the unbounded top bin.
    pub bin_high: Option<f64>,
    /// Share of the parent's particles observed in this bin.
    pub probability: f64,
    pub child: PlanNode,
}

impl PlanBranch {
    pub fn contains(&self, value: f64) -> bool {
        value >= self.bin_low && self.bin_high.is_none_or(|h| value < h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanLeaf {
    /// False when the plan stops without reaching a terminal belief.
    pub success: bool,
    /// Planned minutes from the plan root to this leaf.
    pub total_duration_min: f64,
    /// Fraction of root particles ending here.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub action_run: Vec<RunEntry>,
    pub measurement: Option<MeasurementStep>,
    /// Planned minutes of the run plus the measurement.
    pub duration_min: f64,
    pub branches: Vec<PlanBranch>,
    pub leaf: Option<PlanLeaf>,
}

impl PlanNode {
    /// Fig.-style label, e.g. `MRF (13); CCP2 (8); CCP3 (1); SLS`.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .action_run
            .iter()
            .map(|r| format!("{} ({})", r.action, r.count))
            .collect();
        if let Some(m) = self.measurement {
            parts.push(m.to_string());
        }
        if parts.is_empty() {
            "done".into()
        } else {
            parts.join("; ")
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.branches.is_empty()
    }

    /// Processing steps of the run, expanded.
    pub fn steps(&self) -> impl Iterator<Item = ProcessingStep> + '_ {
        self.action_run
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.action, r.count as usize))
    }

    /// Leaves below this node in depth-first order, lowest bin first.
    pub fn leaves(&self) -> Vec<&PlanNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if n.is_leaf() {
                out.push(n);
            }
            stack.extend(n.branches.iter().rev().map(|b| &b.child));
        }
        out
    }

    /// Follow branch indices from this node.
    pub fn descend(&self, path: &[usize]) -> Option<&PlanNode> {
        let mut n = self;
        for &i in path {
            n = &n.branches.get(i)?.child;
        }
        Some(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub format: String,
    pub binning: Binning,
    pub targets: Targets,
    pub root: PlanNode,
}

fn push_run(run: &mut Vec<RunEntry>, step: ProcessingStep) {
    match run.last_mut() {
        Some(last) if last.action == step => last.count += 1,
        _ => run.push(RunEntry { action: step, count: 1 }),
    }
}

fn targets_of(model: &ProcessConfig) -> Targets {
    Targets { shape_nm: model.target_shape_nm, roughness_nm: model.target_roughness_nm }
}

impl PlanTree {
    /// Linear plan from a chain such as `MRF*13, Interferometry, SLS, CCP2*8`.
    /// Every measurement gets one catch-all branch.
    pub fn from_chain(chain: &str, model: &ProcessConfig) -> Result<Self> {
        let mut nodes: Vec<PlanNode> = Vec::new();
        let mut run = Vec::new();
        let mut counters = crate::model::CycleCounters::default();
        let mut total = 0.0;
        let mut node_minutes = 0.0;
        for item in chain.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, count) = match item.split_once('*') {
                Some((n, c)) => {
                    let c: u32 = c
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidSpec(format!("bad count in chain item `{item}`")))?;
                    (n.trim(), c)
                }
                None => (item, 1),
            };
            let action: Action = name
                .parse()
                .map_err(|e: crate::model::UnknownAction| Error::InvalidSpec(e.to_string()))?;
            for _ in 0..count {
                model.check_legal(action, &counters)?;
                let d = crate::model::step_duration(action, &counters, model)?;
                total += d;
                node_minutes += d;
                match action {
                    Action::Processing(p) => {
                        push_run(&mut run, p);
                        counters = counters.incremented(p);
                    }
                    Action::Measurement(m) => {
                        nodes.push(PlanNode {
                            action_run: std::mem::take(&mut run),
                            measurement: Some(m),
                            duration_min: node_minutes,
                            branches: Vec::new(),
                            leaf: None,
                        });
                        node_minutes = 0.0;
                    }
                }
            }
        }
        let mut child = PlanNode {
            action_run: run,
            measurement: None,
            duration_min: node_minutes,
            branches: Vec::new(),
            leaf: Some(PlanLeaf { success: true, total_duration_min: total, share: 1.0 }),
        };
        while let Some(mut n) = nodes.pop() {
            n.branches.push(PlanBranch { bin_low: 0.0, bin_high: None, probability: 1.0, child });
            child = n;
        }
        Ok(Self {
            format: PLAN_FORMAT.into(),
            binning: Binning::at_targets(model),
            targets: targets_of(model),
            root: child,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let plan = Self::deserialize(&mut de)?;
        de.end()?;
        if plan.format != PLAN_FORMAT {
            return Err(Error::InvalidSpec(format!(
                "unsupported plan format `{}`, expected `{PLAN_FORMAT}`",
                plan.format
            )));
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Label of the most probable root-to-leaf path.
    pub fn dominant_path(&self) -> Vec<&PlanNode> {
        let mut out = vec![&self.root];
        let mut n = &self.root;
        while let Some(b) = n
            .branches
            .iter()
            .reduce(|a, b| if b.probability > a.probability { b } else { a })
        {
            n = &b.child;
            out.push(n);
        }
        out
    }

    /// Graphviz rendering: boxes for action runs, diamonds for measurements,
    /// edges labelled with bin and probability.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph plan {\n  rankdir=TB;\n  node [fontname=\"Helvetica\"];\n");
        let mut next = 0usize;
        self.dot_node(&self.root, &mut next, &mut s);
        s.push_str("}\n");
        s
    }

    fn dot_node(&self, n: &PlanNode, next: &mut usize, s: &mut String) -> usize {
        let id = *next;
        *next += 1;
        let run: Vec<String> = n.action_run.iter().map(|r| format!("{} ({})", r.action, r.count)).collect();
        let run = if run.is_empty() { String::new() } else { run.join("\\n") };
        match (n.measurement, n.leaf) {
            (Some(m), _) => {
                let label = if run.is_empty() { m.to_string() } else { format!("{run}\\n{m}") };
                let _ = writeln!(s, "  n{id} [shape=box, label=\"{label}\\n{:.1} min\"];", n.duration_min);
            }
            (None, Some(leaf)) => {
                let (color, what) = if leaf.success { ("palegreen", "done") } else { ("lightpink", "open") };
                let label = if run.is_empty() { what.to_string() } else { format!("{run}\\n{what}") };
                let _ = writeln!(
                    s,
                    "  n{id} [shape=ellipse, style=filled, fillcolor={color}, label=\"{label}\\n{:.1} min total\"];",
                    leaf.total_duration_min
                );
            }
            (None, None) => {
                let _ = writeln!(s, "  n{id} [shape=box, label=\"{run}\"];");
            }
        }
        let metric = n.measurement.map(|m| m.metric());
        for b in &n.branches {
            let child = self.dot_node(&b.child, next, s);
            let sym = match metric {
                Some(Metric::Shape) => "f",
                _ => "σ",
            };
            let range = match b.bin_high {
                Some(h) => format!("{} ≤ {sym} < {}", b.bin_low, h),
                None => format!("{sym} ≥ {}", b.bin_low),
            };
            let _ = writeln!(s, "  n{id} -> n{child} [label=\"{range}\\np={:.3}\"];", b.probability);
        }
        id
    }
}

/// Extract the plan, failing on any branch that stops short of a terminal belief.
pub fn extract_plan(tree: &SearchTree, min_visits: u64) -> Result<PlanTree> {
    extract_plan_with(tree, min_visits, false)
}

/// Extract the plan. With `allow_dangling`, branches without an eligible
/// child end in a leaf with `success = false` instead of an error.
pub fn extract_plan_with(tree: &SearchTree, min_visits: u64, allow_dangling: bool) -> Result<PlanTree> {
    let root = tree.root();
    if tree.node(root).visits == 0 {
        return Err(Error::InvalidState("search tree root was never visited".into()));
    }
    let history = tree.root_history().clone();
    let ctx = Extract { tree, min_visits, allow_dangling };
    let model = tree.model();
    Ok(PlanTree {
        format: PLAN_FORMAT.into(),
        binning: tree.config().binning.clone(),
        targets: targets_of(model),
        root: ctx.node(root, history, 0.0)?,
    })
}

struct Extract<'a> {
    tree: &'a SearchTree,
    min_visits: u64,
    allow_dangling: bool,
}

impl Extract<'_> {
    fn node(&self, start: NodeId, mut history: History, elapsed: f64) -> Result<PlanNode> {
        let tree = self.tree;
        let mut run = Vec::new();
        let mut minutes = 0.0;
        let mut cur = start;
        loop {
            let node = tree.node(cur);
            if node.terminal {
                return Ok(self.leaf(run, minutes, elapsed, node.share, true));
            }
            let Some(best) = tree.best_action(cur, self.min_visits) else {
                if self.allow_dangling {
                    return Ok(self.leaf(run, minutes, elapsed, node.share, false));
                }
                return Err(Error::PlanIncomplete { history: history.to_string() });
            };
            let chosen = tree.node(best);
            minutes += chosen.edge_minutes;
            match chosen.action().expect("action child") {
                Action::Processing(p) => {
                    push_run(&mut run, p);
                    history.0.push(HistoryEntry { action: p.into(), observation: None });
                    cur = best;
                }
                Action::Measurement(m) => {
                    let mut branches = Vec::with_capacity(chosen.children.len());
                    for &c in &chosen.children {
                        let obs = tree.node(c);
                        let NodeKind::Observation(bin) = obs.kind else {
                            unreachable!("measurement children are observations")
                        };
                        let mut h = history.clone();
                        h.0.push(HistoryEntry { action: m.into(), observation: Some(bin) });
                        let child = self.node(c, h, elapsed + minutes)?;
                        branches.push(branch(bin, obs.share / chosen.share, child));
                    }
                    return Ok(PlanNode {
                        action_run: run,
                        measurement: Some(m),
                        duration_min: minutes,
                        branches,
                        leaf: None,
                    });
                }
            }
        }
    }

    fn leaf(&self, run: Vec<RunEntry>, minutes: f64, elapsed: f64, share: f64, success: bool) -> PlanNode {
        PlanNode {
            action_run: run,
            measurement: None,
            duration_min: minutes,
            branches: Vec::new(),
            leaf: Some(PlanLeaf { success, total_duration_min: elapsed + minutes, share }),
        }
    }
}

fn branch(bin: ObservationBin, probability: f64, child: PlanNode) -> PlanBranch {
    PlanBranch { bin_low: bin.low, bin_high: bin.high, probability, child }
}
