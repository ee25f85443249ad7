//! Bisect the Mo wealth share at which a Val/Mo market crashes and compare
//! it with the analytic bound.

use vtrack::analysis::{mo_crash_threshold_analytic, AnalysisConstants};
use vtrack::experiments::{threshold_search, ExperimentConfig, DEFAULT_THRESHOLD_TOL};

fn main() -> vtrack::error::Result<()> {
    let config = ExperimentConfig::val_mo_threshold();
    let sim = threshold_search(&config, 0.0, 1.0, DEFAULT_THRESHOLD_TOL)?;
    let rho = config.population.rho;
    let c = AnalysisConstants::from_rho(&config.market, &config.commitments, rho)?;
    let analytic = mo_crash_threshold_analytic(&c, rho)?;
    println!("simulated threshold: {:.4} after {} probes", sim.theta, sim.probes);
    println!("analytic threshold:  {analytic:.5}");
    Ok(())
}
