//! Ten Val traders with Gamma-distributed valuations alongside Mo and Rand.

use vtrack::experiments::{multival_run, ExperimentConfig};
use vtrack::metrics::CrashPredicate;

fn main() -> vtrack::error::Result<()> {
    for (val, mo, rand) in [(0.5, 0.0, 0.5), (0.5, 0.3, 0.2)] {
        let res = multival_run(&ExperimentConfig::multival(val, mo, rand), 10, 1000, 0)?;
        let end = res.run.prices.len() - 1;
        println!(
            "val {val} mo {mo} rand {rand}: mean valuation {:.3}, max drop {:.3}, crash {}, val wealth variance {:.5} -> {:.5}",
            res.mean_valuation(),
            res.run.max_relative_drop(),
            res.run.crashed(&CrashPredicate::RelativeDrop(0.3)),
            res.val_wealth_variance(0),
            res.val_wealth_variance(end)
        );
        let h = &res.histogram;
        let (centre, freq) = h
            .centers
            .iter()
            .zip(&h.frequencies)
            .fold((0.0, 0.0), |best, (&c, &f)| if f > best.1 { (c, f) } else { best });
        println!("  price spends {:.0}% of the time {centre:+.1} sd from the mean valuation", 100.0 * freq);
    }
    Ok(())
}
