//! One Val/Mo run past the crash threshold, written as CSV and SVG.

use vtrack::cli::{render_series_svg, write_run_series};
use vtrack::experiments::{simulate, ExperimentConfig};

fn main() -> vtrack::error::Result<()> {
    let mut config = ExperimentConfig::val_mo_threshold();
    config.population.mo_frac = 0.25;
    config.population.val_frac = 0.75;
    let run = simulate(&config, &[0])?;

    let dir = std::env::temp_dir();
    let mut csv = Vec::new();
    write_run_series(&mut csv, &run)?;
    std::fs::write(dir.join("single_run.csv"), csv)?;
    std::fs::write(dir.join("single_run.svg"), render_series_svg(&run)?)?;

    match run.crash_step(&config.crash) {
        Some(t) => println!("crashed at step {t}, final price {:.3e}", run.prices.last().unwrap()),
        None => println!("no crash"),
    }
    println!("wrote single_run.csv and single_run.svg to {}", dir.display());
    Ok(())
}
