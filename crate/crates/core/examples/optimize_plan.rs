//! Search a branched plan for a run configuration and compare it with the
//! configured benchmark chain on the same sampled states.
//!
//! `cargo run --release --example optimize_plan -- [config.toml]`
//!
//! Defaults to `configs/quick.toml`; `configs/blank150.toml` runs the full
//! 10⁴-particle search (about a quarter of an hour).

use std::path::PathBuf;

use polishplan::config::RunConfig;
use polishplan::run::run_optimize;

fn main() -> polishplan::Result<()> {
    env_logger::init();
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml")
    });
    let cfg = RunConfig::load(&path)?;
    let run = run_optimize(&cfg)?;
    println!("{} simulations in {:.1}s", run.report.simulations, run.seconds);
    for node in run.outcome.plan.dominant_path() {
        println!("  {}", node.label());
    }
    let r = &run.report;
    println!("plan: mean {:.1} min, in target {:.3}", r.plan.mean_duration_min, r.plan.in_target_rate);
    if let (Some(b), Some(c)) = (&r.benchmark, &r.comparison) {
        println!("benchmark: mean {:.1} min, in target {:.3}", b.mean_duration_min, b.in_target_rate);
        println!(
            "plan - benchmark: {:.1} min, 95% CI [{:.1}, {:.1}]",
            c.mean_difference_min, c.ci_low_min, c.ci_high_min
        );
    }
    Ok(())
}
