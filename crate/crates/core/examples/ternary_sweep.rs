//! Crash frequency across Val/Mo/Rand compositions on a coarse simplex.

use vtrack::cli::render_ternary_svg;
use vtrack::experiments::{ternary_sweep, ExperimentConfig};

fn main() -> vtrack::error::Result<()> {
    let grid = ternary_sweep(&ExperimentConfig::ternary(), 10, 10)?;
    println!("{:>5} {:>5} {:>5} {:>6} {:>9}", "val", "mo", "rand", "crash", "mean drop");
    for p in grid.points.iter().filter(|p| p.rand_frac > 0.0) {
        println!("{:5.2} {:5.2} {:5.2} {:6.2} {:9.3}", p.val_frac, p.mo_frac, p.rand_frac, p.crash_freq, p.mean_drop);
    }
    let path = std::env::temp_dir().join("ternary.svg");
    std::fs::write(&path, render_ternary_svg(&grid)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
