mod common;

use proptest::prelude::*;
use rand::Rng;
use vtrack::analysis::{
    alpha_fixed_points, alpha_map, beta_fixed_points, beta_map, crash_sufficient, AnalysisConstants, ReducedState,
};
use vtrack::engine::{run, step_mut, CommitmentParams, MarketParams};
use vtrack::metrics::CrashPredicate;
use vtrack::seed::{rng_from_seed, task_seed};
use vtrack::traders::{init_population, PopulationSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_matches_reduced_dynamics(seed in any::<u64>()) {
        let case = common::val_mo_case(&mut rng_from_seed(seed));
        let eq = common::engine_vs_reduced(&case, 200).unwrap();
        prop_assert!(eq.max_diff <= 1e-9, "{eq:?} for {case:?}");
    }

    #[test]
    fn steps_conserve_and_respect_the_cap(seed in any::<u64>(), val in 0.05..0.9f64, mo_share in 0.0..1.0f64) {
        let mo = (1.0 - val) * mo_share;
        let spec = PopulationSpec {
            val_frac: val,
            mo_frac: mo,
            rand_frac: 1.0 - val - mo,
            initial_momentum: -0.002,
            ..PopulationSpec::default()
        };
        let params = MarketParams::default();
        let k = CommitmentParams::default();
        let mut rng = rng_from_seed(seed);
        let mut state = init_population(&spec, &mut rng).unwrap();
        let (c0, q0) = (state.cash_sum(), state.asset_sum());
        for _ in 0..100 {
            let rec = step_mut(&mut state, &params, &k, &mut rng).unwrap();
            prop_assert!((state.cash_sum() / c0 - 1.0).abs() <= 1e-12);
            prop_assert!((state.asset_sum() / q0 - 1.0).abs() <= 1e-12);
            prop_assert!((rec.new_price / rec.old_price).ln().abs() <= params.eta + 1e-12);
            prop_assert!(rec.executed >= 0.0);
            prop_assert!(state.traders.iter().all(|t| t.cash >= 0.0 && t.asset >= 0.0));
        }
    }
}

fn random_constants(rng: &mut impl Rng) -> AnalysisConstants {
    let params = MarketParams {
        lambda: rng.random_range(0.01..0.1),
        eta: rng.random_range(0.03..0.2),
        ..MarketParams::default()
    };
    let k = CommitmentParams {
        kv_buy: rng.random_range(0.02..0.4),
        kv_sell: rng.random_range(0.02..0.4),
        km_buy: rng.random_range(0.02..0.4),
        km_sell: rng.random_range(0.02..0.4),
        ..CommitmentParams::default()
    };
    AnalysisConstants::from_rho(&params, &k, rng.random_range(1.0..8.0)).unwrap()
}

/// Sign changes of `f(x) - x` on a fine grid, as a brute-force oracle.
fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = 400_000;
    let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    xs.windows(2)
        .filter(|w| (f(w[0]) - w[0]).signum() != (f(w[1]) - w[1]).signum())
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect()
}

#[test]
fn fixed_points_agree_with_brute_force_scan() {
    let mut rng = rng_from_seed(7);
    for _ in 0..20 {
        let c = random_constants(&mut rng);
        // Outer roots can sit far below the cap boundary.
        let span = 40.0;
        let tol = 2.0 * span / 400_000.0;

        let alpha = alpha_fixed_points(&c).unwrap();
        let scanned: Vec<f64> = scan_roots(|a| alpha_map(a, &c).unwrap(), -span, -1e-9);
        if !alpha.trivial {
            assert_eq!(alpha.roots.len(), scanned.len(), "{c:?}");
            for (r, s) in alpha.roots.iter().zip(&scanned) {
                assert!((r.value - s).abs() <= tol, "alpha {} vs {s}", r.value);
            }
        }

        let beta = beta_fixed_points(&c).unwrap();
        let scanned: Vec<f64> = scan_roots(|b| beta_map(b, &c).unwrap(), 1e-9, span);
        if !beta.trivial {
            assert_eq!(beta.roots.len(), scanned.len(), "{c:?}");
            for (r, s) in beta.roots.iter().zip(&scanned) {
                assert!((r.value - s).abs() <= tol, "beta {} vs {s}", r.value);
                assert!(r.residual <= 1e-10);
            }
        }
    }
}

#[test]
fn alpha_map_slope_and_monotonicity() {
    let mut rng = rng_from_seed(8);
    for _ in 0..50 {
        let c = random_constants(&mut rng);
        let mut prev = alpha_map(-10.0, &c).unwrap();
        for i in 1..=2000 {
            let a = -10.0 + 13.0 * i as f64 / 2000.0;
            let next = alpha_map(a, &c).unwrap();
            assert!(next > prev, "map not increasing at {a}");
            assert!(next - prev >= (1.0 - c.lambda) * 13.0 / 2000.0 - 1e-9);
            prev = next;
        }
    }
}

fn val_mo_population(theta: f64) -> PopulationSpec {
    PopulationSpec { initial_momentum: -1e-4, ..PopulationSpec::val_mo(theta) }
}

#[test]
fn sufficient_crash_condition_implies_engine_crash() {
    let params = MarketParams { horizon: 2000, ..MarketParams::default() };
    let mut checked = 0;
    for (kv_buy, km_sell) in [(0.1, 0.1), (0.1, 0.15), (0.15, 0.2), (0.2, 0.1)] {
        let k = CommitmentParams { kv_buy, km_sell, ..CommitmentParams::default() };
        let c = AnalysisConstants::from_rho(&params, &k, 4.0).unwrap();
        for i in 0..40 {
            let theta = 0.05 + 0.02 * i as f64;
            let r = ReducedState {
                pi: 0.0,
                m: -1e-4,
                alpha: ((1.0 - theta) / theta).ln() - 4f64.ln(),
                beta: (theta / (1.0 - theta)).ln() - 4f64.ln(),
            };
            if !crash_sufficient(&r, &c).unwrap() {
                continue;
            }
            let state = init_population(&val_mo_population(theta), &mut rng_from_seed(0)).unwrap();
            let result = run(&state, &params, &k, 0).unwrap();
            assert!(result.crashed(&CrashPredicate::DeciblackDrop(5.0)), "theta {theta} k {k:?}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn asset_poor_market_booms() {
    let spec = PopulationSpec { rho: 0.25, initial_momentum: 1e-3, ..PopulationSpec::val_mo(0.5) };
    let state = init_population(&spec, &mut rng_from_seed(0)).unwrap();
    let result = run(&state, &MarketParams::default(), &CommitmentParams::default(), 0).unwrap();
    let p0 = result.prices[0];
    let peak = result.prices.iter().cloned().fold(0.0, f64::max);
    assert!(result.boom_step(&CrashPredicate::DeciblackDrop(5.0)).is_some(), "peak {peak}");
    assert!(peak > p0 * 2f64.sqrt());
}

#[test]
fn task_seeds_make_runs_reproducible() {
    let spec = PopulationSpec { val_frac: 0.4, mo_frac: 0.2, rand_frac: 0.4, ..PopulationSpec::default() };
    let go = || {
        let mut rng = rng_from_seed(task_seed(3, &[1, 2]));
        let state = init_population(&spec, &mut rng).unwrap();
        vtrack::engine::run_with_rng(&state, &MarketParams::default(), &CommitmentParams::default(), &mut rng)
            .unwrap()
            .prices
    };
    assert_eq!(go(), go());
}
