//! Mo crash threshold under the ratio-power and power-law impact functions.

use vtrack::experiments::{impact_comparison, ExperimentConfig};

fn main() -> vtrack::error::Result<()> {
    let report = impact_comparison(&ExperimentConfig::val_mo_threshold())?;
    for e in &report.entries {
        println!("{:?}: threshold {:.4}", e.impact, e.threshold.theta);
    }
    Ok(())
}
