//! Simulated against analytic Mo thresholds over a grid of commitments.

use vtrack::engine::Settlement;
use vtrack::experiments::{commitment_grid, linspace, ExperimentConfig};

fn main() -> vtrack::error::Result<()> {
    let ks = linspace(0.05, 0.30, 6);
    let grid = commitment_grid(&ExperimentConfig::commitment_grid(), &ks, &ks, &[Settlement::CurrentPrice])?;
    println!("rows kV+, columns kM-; each cell simulated/analytic");
    for &kb in &ks {
        let row: Vec<String> = grid
            .cells
            .iter()
            .filter(|c| c.k_buy == kb)
            .map(|c| format!("{:.3}/{:.3}", c.theta_sim, c.theta_analytic))
            .collect();
        println!("{kb:.2}  {}", row.join("  "));
    }
    Ok(())
}
