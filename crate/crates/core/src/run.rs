//! The optimize pipeline shared by the command line and the acceptance
//! suite: search, plan extraction, evaluation and persistence.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::belief::init_belief;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pomcp::{bootstrap_mean_ci, evaluate_plan, optimize, EvaluationReport, OptimizeOutcome, PlanTree};
use crate::sampling::{derive_seed, rng_from_seed};

pub const REPORT_FORMAT: &str = "polishplan.report/1";

/// Paired comparison of two plans evaluated on the same sampled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Mean of `plan - benchmark` minutes per state.
    pub mean_difference_min: f64,
    pub ci_low_min: f64,
    pub ci_high_min: f64,
    pub level: f64,
}

impl Comparison {
    /// True when the whole interval lies below zero.
    pub fn plan_is_faster(&self) -> bool {
        self.ci_high_min < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub simulations: u64,
    pub dead_ends: usize,
    pub plan: EvaluationReport,
    #[serde(default)]
    pub benchmark: Option<EvaluationReport>,
    #[serde(default)]
    pub comparison: Option<Comparison>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.format != REPORT_FORMAT {
            return Err(Error::InvalidSpec(format!("unsupported report format `{}`", r.format)));
        }
        Ok(r)
    }
}

/// Evaluate `plan` (and the configured benchmark) on the same states.
pub fn evaluate_with_benchmark(
    plan: &PlanTree,
    cfg: &RunConfig,
) -> Result<(EvaluationReport, Option<EvaluationReport>, Option<Comparison>)> {
    let ev = &cfg.evaluate;
    let report = evaluate_plan(plan, &cfg.initial.belief, ev.n_states, &cfg.model, ev.seed)?;
    let Some(chain) = &ev.benchmark_chain else {
        return Ok((report, None, None));
    };
    let bench_plan = PlanTree::from_chain(chain, &cfg.model)
        .map_err(|e| Error::config("evaluate.benchmark_chain", e.to_string()))?;
    let bench = evaluate_plan(&bench_plan, &cfg.initial.belief, ev.n_states, &cfg.model, ev.seed)?;
    let diffs: Vec<f64> = report.durations().iter().zip(bench.durations()).map(|(a, b)| a - b).collect();
    let level = 0.95;
    let (lo, hi) = bootstrap_mean_ci(&diffs, ev.bootstrap_resamples.max(1), level, derive_seed(ev.seed, 0xB007));
    let comparison = Comparison {
        mean_difference_min: diffs.iter().sum::<f64>() / diffs.len() as f64,
        ci_low_min: lo,
        ci_high_min: hi,
        level,
    };
    Ok((report, Some(bench), Some(comparison)))
}

pub struct RunArtifacts {
    pub outcome: OptimizeOutcome,
    pub report: RunReport,
    pub seconds: f64,
}

/// Search, extract and evaluate. Deterministic for a fixed configuration.
pub fn run_optimize(cfg: &RunConfig) -> Result<RunArtifacts> {
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(cfg.search.rng_seed, 0x1417));
    let belief = init_belief(&cfg.initial.belief, cfg.initial.particles, &mut rng)?;
    let outcome = optimize(belief, &cfg.search, &cfg.model)?;
    let (mut plan, mut benchmark, comparison) = evaluate_with_benchmark(&outcome.plan, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    plan.states.clear();
    if let Some(b) = benchmark.as_mut() {
        b.states.clear();
    }
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        simulations: outcome.simulations,
        dead_ends: outcome.dead_ends,
        plan,
        benchmark,
        comparison,
    };
    Ok(RunArtifacts { outcome, report, seconds })
}

/// Write plan JSON, DOT, per-branch CSV and the report into the output directory.
pub fn write_artifacts(cfg: &RunConfig, plan: &PlanTree, report: &RunReport) -> Result<()> {
    let out = &cfg.output;
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    plan.save(&out.plan_json())?;
    let write = |path: std::path::PathBuf, text: String| std::fs::write(&path, text).map_err(|e| Error::io(&path, e));
    write(out.plan_dot(), plan.to_dot())?;
    write(out.branches_csv(), report.plan.branches_csv())?;
    write(out.report_json(), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}
