//! Render a plan as Graphviz DOT and JSON.
//!
//! `cargo run --example export_dot > plan.dot && dot -Tsvg plan.dot -o plan.svg`

use polishplan::model::ProcessConfig;
use polishplan::pomcp::PlanTree;

fn main() -> polishplan::Result<()> {
    let model = ProcessConfig::table1();
    let plan = PlanTree::from_chain("MRF*13, Interferometry, SLS, CCP2*8, CCP3, Interferometry, SLS", &model)?;
    print!("{}", plan.to_dot());
    eprintln!("{}", plan.to_json()?);
    Ok(())
}
