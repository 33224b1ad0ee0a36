//! Simulate a fixed process chain from a 150 nm / 2.8 nm blank and print the
//! per-step mean and spread of both metrics.
//!
//! `cargo run --example simulate_chain -- [runs]`

use polishplan::belief::InitialBelief;
use polishplan::calibration::generate_trajectories;
use polishplan::model::{Action, ProcessConfig, ProcessingStep};

fn main() -> polishplan::Result<()> {
    let runs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    let model = ProcessConfig::table1().with_alpha(0.1);
    let start = InitialBelief::PointMass { shape_nm: 150.0, roughness_nm: 2.8 };
    let mut chain: Vec<Action> = vec![ProcessingStep::Mrf.into(); 13];
    chain.extend(std::iter::repeat_n(Action::from(ProcessingStep::Ccp2), 8));
    chain.push(ProcessingStep::Ccp3.into());

    let traj = generate_trajectories(&model, &start, &chain, runs, 42)?;
    println!("{:>4} {:>6} {:>10} {:>8} {:>10} {:>8}", "step", "action", "f mean", "f sd", "σ mean", "σ sd");
    for k in 0..=chain.len() {
        let f: Vec<f64> = traj.iter().map(|t| t.points[k].f_nm).collect();
        let s: Vec<f64> = traj.iter().map(|t| t.points[k].sigma_nm).collect();
        let (fm, fs) = mean_sd(&f);
        let (sm, ss) = mean_sd(&s);
        let name = traj[0].points[k].action.map_or("start", |a| a.name());
        println!("{k:>4} {name:>6} {fm:>10.3} {fs:>8.3} {sm:>10.4} {ss:>8.4}");
    }
    let done = traj.iter().filter(|t| t.points.last().is_some_and(|p| p.f_nm <= 13.0 && p.sigma_nm <= 0.5)).count();
    println!("{done}/{runs} runs end in target");
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}
