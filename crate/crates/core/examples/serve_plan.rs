//! Serve the navigation API for a fixed chain on 127.0.0.1:8080.
//!
//! `cargo run --example serve_plan`, then for instance
//! `curl -X POST localhost:8080/api/session` and
//! `curl -X POST localhost:8080/api/session/s1/observe -H 'content-type: application/json' -d '{"value": 12.1}'`

use polishplan::model::ProcessConfig;
use polishplan::pomcp::PlanTree;
use polishplan::service::{serve, AppState};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let plan = PlanTree::from_chain("MRF*12, Deflectometry, CCP2*9, CCP3, SLS", &ProcessConfig::table1())
        .expect("chain is legal");
    serve(AppState::new(plan, None), None, "127.0.0.1:8080").await
}
