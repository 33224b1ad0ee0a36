//! Evaluate two fixed chains on the same 1000 sampled blanks and bootstrap
//! the paired difference of their total times.
//!
//! `cargo run --release --example evaluate_chains`

use polishplan::belief::InitialBelief;
use polishplan::model::ProcessConfig;
use polishplan::pomcp::{bootstrap_mean_ci, evaluate_plan, PlanTree};

const BENCHMARK: &str = "MRF*13, Interferometry, SLS, CCP2*8, CCP3, Interferometry, SLS";
const SHORTER: &str = "MRF*12, CCP2*9, CCP3, SLS, Deflectometry";

fn main() -> polishplan::Result<()> {
    let model = ProcessConfig::table1().with_alpha(0.1);
    let blank = InitialBelief::TruncatedNormal {
        shape_mean_nm: 150.0,
        shape_std_nm: 5.0,
        roughness_mean_nm: 2.8,
        roughness_std_nm: 0.1,
    };
    let mut reports = Vec::new();
    for chain in [BENCHMARK, SHORTER] {
        let r = evaluate_plan(&PlanTree::from_chain(chain, &model)?, &blank, 1000, &model, 5)?;
        println!(
            "{chain}\n  mean {:.1} min, max {:.1} min, in target {:.3}",
            r.mean_duration_min, r.max_duration_min, r.in_target_rate
        );
        reports.push(r);
    }
    let diffs: Vec<f64> = reports[1].durations().iter().zip(reports[0].durations()).map(|(a, b)| a - b).collect();
    let (lo, hi) = bootstrap_mean_ci(&diffs, 2000, 0.95, 1);
    println!("second - first: 95% CI [{lo:.1}, {hi:.1}] min");
    Ok(())
}
