//! Show the expert heuristic used for rollouts: its choice probabilities on a
//! few states and the length of complete rollouts from the 150 nm blank.
//!
//! `cargo run --release --example expert_rollouts`

use polishplan::model::{in_target, transition, CycleCounters, ProcessConfig, QualityState};
use polishplan::pomcp::{ccp2_cycles_needed, chain_gate, expert_choice, p_mrf, ExpertChoice};
use polishplan::sampling::rng_from_seed;

fn main() -> polishplan::Result<()> {
    let model = ProcessConfig::table1().with_alpha(0.1);
    for (f, s) in [(150.0, 2.8), (20.0, 2.1), (4.0, 1.8), (9.0, 1.9)] {
        let gate = chain_gate(f, s, 13.0, 0.5, model.alpha);
        println!(
            "f={f:>5} σ={s}: p_MRF={:.3} chain={gate} n={}",
            p_mrf(f, s, 13.0, 0.5),
            ccp2_cycles_needed(s, 0.5)
        );
    }
    let mut rng = rng_from_seed(9);
    let mut lengths = Vec::new();
    for _ in 0..200 {
        let (mut state, mut counters) = (QualityState::new(150.0, 2.8), CycleCounters::default());
        let mut steps = 0;
        while !in_target(&state, &model) && steps < 200 {
            let ExpertChoice::Steps(next) = expert_choice(&state, &counters, &model, &mut rng) else { break };
            for step in next {
                (state, _, counters) = transition(state, counters, step, &mut rng, &model)?;
                steps += 1;
            }
        }
        lengths.push(steps);
    }
    lengths.sort_unstable();
    println!("rollout length: median {}, 90th percentile {}, max {}", lengths[100], lengths[180], lengths[199]);
    Ok(())
}
