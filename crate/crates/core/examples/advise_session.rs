//! Follow an optimized plan on one simulated blank: the process is simulated
//! step by step, and each measurement reading is entered into an advise
//! session that answers with the next action run.
//!
//! `cargo run --release --example advise_session -- [seed]`

use polishplan::advise::{Advice, AdviseSession};
use polishplan::config::RunConfig;
use polishplan::model::{measure, transition, CycleCounters, QualityState};
use polishplan::run::run_optimize;
use polishplan::sampling::rng_from_seed;

fn main() -> polishplan::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let cfg = RunConfig::load(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.toml"))?;
    let plan = run_optimize(&cfg)?.outcome.plan;
    let model = &cfg.model;

    let mut rng = rng_from_seed(seed);
    let mut state = QualityState::new(150.0, 2.8);
    let mut counters = CycleCounters::default();
    let mut session = AdviseSession::new("demo", &plan);
    loop {
        let (run, measurement) = match &session.advice {
            Advice::Next { action_run, measurement, .. } => (action_run.clone(), Some(*measurement)),
            Advice::Done { action_run, .. } => (action_run.clone(), None),
            Advice::OutOfPlan { .. } => unreachable!("session advice is never out of plan"),
        };
        for entry in &run {
            for _ in 0..entry.count {
                (state, _, counters) = transition(state, counters, entry.action, &mut rng, model)?;
            }
        }
        let Some(m) = measurement else { break };
        let (reading, _) = measure(&state, m, &mut rng, model)?;
        let advice = session.observe(&plan, Some(m), reading)?;
        println!("{m} reads {reading:.3} nm -> {}", serde_json::to_string(&advice)?);
        if let Advice::OutOfPlan { .. } = advice {
            println!("reading is outside every planned bin; stopping");
            break;
        }
    }
    println!("final state f = {:.2} nm, σ = {:.3} nm after path {:?}", state.shape_f, state.roughness_sigma, session.path);
    Ok(())
}
