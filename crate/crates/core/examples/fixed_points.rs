//! Fixed points of the alpha- and beta-maps for a few commitment settings.

use vtrack::analysis::{alpha_fixed_points, beta_fixed_points, mo_crash_threshold_analytic, AnalysisConstants};
use vtrack::engine::{CommitmentParams, MarketParams};

fn main() -> vtrack::error::Result<()> {
    let params = MarketParams::default();
    for (kv_buy, km_sell) in [(0.1, 0.1), (0.1, 0.2), (0.0955, 0.3), (0.2, 0.1)] {
        let k = CommitmentParams { kv_buy, km_sell, ..CommitmentParams::default() };
        let c = AnalysisConstants::from_rho(&params, &k, 4.0)?;
        let alpha = alpha_fixed_points(&c)?;
        let beta = beta_fixed_points(&c)?;
        let roots: Vec<String> = alpha.roots.iter().map(|r| format!("{:.5} ({:?})", r.value, r.range)).collect();
        println!(
            "kV+ = {kv_buy:<6} kM- = {km_sell:<4} alpha roots [{}], alpha_- = {:.5}, beta_+ = {:.5}, theta = {:.4}",
            roots.join(", "),
            alpha.selected,
            beta.selected,
            mo_crash_threshold_analytic(&c, 4.0)?
        );
    }
    Ok(())
}
