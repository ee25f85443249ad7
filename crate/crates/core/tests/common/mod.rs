//! Helpers shared by the integration tests and the acceptance report.
#![allow(dead_code)]

use rand::Rng;
use vtrack::analysis::{classify_region, reduce, reduced_step, AnalysisConstants, Region};
use vtrack::engine::{step_mut, CommitmentParams, MarketParams, Settlement};
use vtrack::error::Result;
use vtrack::seed::{rng_from_seed, SimRng};
use vtrack::traders::{init_population, PopulationSpec};

#[derive(Debug, Clone, Copy)]
pub struct ValMoCase {
    pub params: MarketParams,
    pub k: CommitmentParams,
    pub spec: PopulationSpec,
}

/// Random single-Val/single-Mo market with current-price settlement,
/// started off the region boundaries.
pub fn val_mo_case(rng: &mut SimRng) -> ValMoCase {
    let params = MarketParams {
        lambda: rng.random_range(0.02..0.08),
        eta: rng.random_range(0.05..0.12),
        mu: rng.random_range(0.001..0.01),
        settlement: Settlement::CurrentPrice,
        ..MarketParams::default()
    };
    let mut k = || rng.random_range(0.05..0.3);
    let k = CommitmentParams {
        kv_buy: k(),
        kv_sell: k(),
        km_buy: k(),
        km_sell: k(),
        ..CommitmentParams::default()
    };
    let theta = rng.random_range(0.05..0.45);
    let log_p0: f64 = rng.random_range(0.005..0.15) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let m0: f64 = rng.random_range(1e-4..3e-3) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let spec = PopulationSpec {
        initial_price: log_p0.exp(),
        initial_momentum: m0,
        rho: rng.random_range(2.0..6.0),
        ..PopulationSpec::val_mo(theta)
    };
    ValMoCase { params, k, spec }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Equivalence {
    pub max_diff: f64,
    /// Steps spent in cases 1 to 4.
    pub visits: [usize; 4],
}

/// Step the engine and the reduced map side by side and record the largest
/// coordinate discrepancy.
pub fn engine_vs_reduced(case: &ValMoCase, steps: usize) -> Result<Equivalence> {
    let mut rng = rng_from_seed(0);
    let mut state = init_population(&case.spec, &mut rng)?;
    let c = AnalysisConstants::new(&case.params, &case.k, 1.0, state.total_cash, state.total_asset)?;
    let mut r = reduce(&state, &c)?;
    let mut out = Equivalence::default();
    for _ in 0..steps {
        match classify_region(r.pi, r.m) {
            Region::Case1 => out.visits[0] += 1,
            Region::Case2 => out.visits[1] += 1,
            Region::Case3 => out.visits[2] += 1,
            Region::Case4 => out.visits[3] += 1,
            Region::Boundary => break,
        }
        step_mut(&mut state, &case.params, &case.k, &mut rng)?;
        r = reduced_step(&r, &c)?;
        let e = reduce(&state, &c)?;
        out.max_diff = out.max_diff.max(r.max_abs_diff(&e));
    }
    Ok(out)
}
