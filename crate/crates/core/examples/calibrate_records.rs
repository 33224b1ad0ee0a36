//! Fit MRF and CCP2 multiplier means and two unlogged cycle counts to the
//! records in `configs/calibration.toml`, then print the per-combination table.
//!
//! `cargo run --release --example calibrate_records`

use polishplan::calibration::CalibrationFile;
use polishplan::model::ProcessConfig;

fn main() -> polishplan::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/calibration.toml");
    let file = CalibrationFile::load(&path)?;
    let start = ProcessConfig::table1().with_alpha(0.1);
    let fit = polishplan::calibration::calibrate(&file.problem, &file.records, &start)?;
    println!("best: {:?} {:?}", fit.params.cycles, fit.params.means);
    println!("objective {:.3e} after {} evaluations", fit.objective, fit.evaluations);
    for row in &fit.table {
        match row.objective {
            Some(v) => println!("  {:?}: {v:.4e}", row.cycles),
            None => println!("  {:?}: infeasible ({})", row.cycles, row.note.as_deref().unwrap_or("")),
        }
    }
    Ok(())
}
