//! Reproduction harnesses: threshold bisection, ternary composition sweeps,
//! commitment grids, impact-function and settlement comparisons, and long
//! runs with many valuation traders.
//!
//! Every simulation is an independent task whose seed is derived from the
//! master seed and the task coordinates. Tasks may run on any number of
//! rayon workers; results are gathered in task order, so outputs do not
//! depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{mo_crash_threshold_analytic, AnalysisConstants};
use crate::engine::{run, CommitmentParams, ImpactFunction, MarketParams, RunResult, Settlement};
use crate::error::{Error, Result};
use crate::metrics::{price_level_histogram, CrashPredicate, Histogram};
use crate::seed::{rng_from_seed, task_seed};
use crate::traders::{init_population, PopulationSpec, RandTemplate, ValuationSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub k_min: f64,
    pub k_max: f64,
    pub cells: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { k_min: 0.02, k_max: 0.30, cells: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSettings {
    pub n: usize,
    pub reps: usize,
    pub p: f64,
    pub shape: f64,
    pub rate: f64,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self { n: 100, reps: 10_000, p: 1.3, shape: 8.0, rate: 8.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketParams,
    pub commitments: CommitmentParams,
    pub population: PopulationSpec,
    pub crash: CrashPredicate,
    pub seed: u64,
    pub replicates: usize,
    /// Ternary subdivisions.
    pub resolution: usize,
    pub grid: GridSettings,
    pub estimate: EstimateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            market: MarketParams::default(),
            commitments: CommitmentParams::default(),
            population: PopulationSpec::default(),
            crash: CrashPredicate::DeciblackDrop(5.0),
            seed: 0,
            replicates: 20,
            resolution: 20,
            grid: GridSettings::default(),
            estimate: EstimateSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.commitments.validate()?;
        self.population.validate()?;
        self.crash.validate()?;
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be at least 1".into()));
        }
        let g = self.grid;
        if !(g.k_min > 0.0 && g.k_min <= g.k_max && g.k_max <= 1.0) || g.cells == 0 {
            return Err(Error::Config(format!(
                "grid range must satisfy 0 < k_min <= k_max <= 1 with cells >= 1, got {g:?}"
            )));
        }
        Ok(())
    }

    /// Single Val against Mo from `p = u = 1` with `m0 = -0.001`.
    pub fn val_mo_threshold() -> Self {
        Self {
            population: PopulationSpec {
                initial_momentum: -0.001,
                ..PopulationSpec::val_mo(0.2)
            },
            ..Self::default()
        }
    }

    /// Commitment-grid setting: crash means a fall below 0.01.
    pub fn commitment_grid() -> Self {
        Self {
            crash: CrashPredicate::DropBelow(0.01),
            ..Self::val_mo_threshold()
        }
    }

    /// Ternary sweep with one Val, refined Rand and zero initial momentum.
    pub fn ternary() -> Self {
        let mut c = Self {
            crash: CrashPredicate::RelativeDrop(0.30),
            ..Self::default()
        };
        c.population.initial_momentum = 0.0;
        c.population.rand_mode = RandTemplate::Refined { critical_fraction: 0.2 };
        c
    }

    /// Basic-Rand ternary variant started with `m0 = -0.001`.
    pub fn ternary_basic_rand() -> Self {
        let mut c = Self::ternary();
        c.population.initial_momentum = -0.001;
        c.population.rand_mode = RandTemplate::Basic;
        c
    }

    /// Ten gamma-distributed valuations, refined Rand, zero momentum.
    pub fn multival(val_frac: f64, mo_frac: f64, rand_frac: f64) -> Self {
        let mut c = Self::ternary();
        c.market.horizon = 1000;
        c.population = PopulationSpec {
            val_frac,
            mo_frac,
            rand_frac,
            n_vals: 10,
            valuation: ValuationSource::Gamma { shape: 8.0, rate: 8.0 },
            rand_mode: RandTemplate::Refined { critical_fraction: 0.2 },
            initial_momentum: 0.0,
            ..PopulationSpec::default()
        };
        c
    }

    fn with_composition(&self, val: f64, mo: f64, rand: f64) -> Self {
        let mut c = *self;
        c.population.val_frac = val;
        c.population.mo_frac = mo;
        c.population.rand_frac = rand;
        c
    }
}

/// Build the population and run one seeded replicate. The population
/// stream (valuation draws) and the trading stream are separate.
pub fn simulate(config: &ExperimentConfig, coords: &[u64]) -> Result<RunResult> {
    let mut pop_coords = coords.to_vec();
    pop_coords.push(0);
    let mut run_coords = coords.to_vec();
    run_coords.push(1);
    let state = init_population(
        &config.population,
        &mut rng_from_seed(task_seed(config.seed, &pop_coords)),
    )?;
    run(
        &state,
        &config.market,
        &config.commitments,
        task_seed(config.seed, &run_coords),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Smallest probed Mo share that crashed (or the boundary when unbracketed).
    pub theta: f64,
    /// Whether the crash outcome changed between `lo` and `hi`.
    pub bracketed: bool,
    pub probes: usize,
}

fn probe_crash(config: &ExperimentConfig, theta: f64) -> Result<bool> {
    let rand = config.population.rand_frac;
    let c = config.with_composition((1.0 - theta - rand).max(0.0), theta, rand);
    if rand == 0.0 {
        return Ok(simulate(&c, &[0])?.crashed(&c.crash));
    }
    let crashes = (0..c.replicates)
        .into_par_iter()
        .map(|r| simulate(&c, &[r as u64]).map(|res| res.crashed(&c.crash)))
        .collect::<Result<Vec<_>>>()?;
    Ok(2 * crashes.iter().filter(|&&x| x).count() > c.replicates)
}

/// Bisect the initial Mo wealth share for the crash predicate. The Rand
/// share stays fixed and Val takes the remainder.
pub fn threshold_search(config: &ExperimentConfig, lo: f64, hi: f64, tol: f64) -> Result<ThresholdResult> {
    let rand = config.population.rand_frac;
    let hi = hi.min(1.0 - rand);
    if !(0.0 <= lo && lo < hi) || !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 <= lo < hi and tol > 0, got lo={lo}, hi={hi}, tol={tol}"
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut probes = 2;
    if probe_crash(config, lo)? {
        return Ok(ThresholdResult { theta: lo, bracketed: false, probes });
    }
    if !probe_crash(config, hi)? {
        return Ok(ThresholdResult { theta: hi, bracketed: false, probes });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if probe_crash(config, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ThresholdResult { theta: hi, bracketed: true, probes })
}

pub const DEFAULT_THRESHOLD_TOL: f64 = 5e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TernaryPoint {
    pub val_frac: f64,
    pub mo_frac: f64,
    pub rand_frac: f64,
    pub mean_drop: f64,
    pub crash_freq: f64,
    pub boom_freq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryGrid {
    pub resolution: usize,
    pub replicates: usize,
    pub points: Vec<TernaryPoint>,
}

impl TernaryGrid {
    pub fn point_count(resolution: usize) -> usize {
        (resolution + 1) * (resolution + 2) / 2
    }
}

/// Simplex points `(i, j, k) / r` with `i + j + k = r`, ordered by Val
/// steps then Mo steps.
pub fn simplex_points(resolution: usize) -> Vec<(f64, f64, f64)> {
    let r = resolution as f64;
    let mut out = Vec::with_capacity(TernaryGrid::point_count(resolution));
    for i in 0..=resolution {
        for j in 0..=(resolution - i) {
            let k = resolution - i - j;
            out.push((i as f64 / r, j as f64 / r, k as f64 / r));
        }
    }
    out
}

pub fn ternary_sweep(config: &ExperimentConfig, resolution: usize, replicates: usize) -> Result<TernaryGrid> {
    if resolution == 0 || replicates == 0 {
        return Err(Error::InvalidInput("resolution and replicates must be positive".into()));
    }
    let points = simplex_points(resolution);
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..replicates).map(move |r| (p, r)))
        .collect();
    let outcomes = tasks
        .par_iter()
        .map(|&(p, r)| {
            let (v, m, q) = points[p];
            let c = config.with_composition(v, m, q);
            let res = simulate(&c, &[p as u64, r as u64])?;
            Ok((
                res.max_relative_drop(),
                res.crashed(&c.crash),
                res.boom_step(&c.crash).is_some(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = replicates as f64;
    let points = points
        .iter()
        .zip(outcomes.chunks(replicates))
        .map(|(&(val_frac, mo_frac, rand_frac), chunk)| TernaryPoint {
            val_frac,
            mo_frac,
            rand_frac,
            mean_drop: chunk.iter().map(|o| o.0).sum::<f64>() / n,
            crash_freq: chunk.iter().filter(|o| o.1).count() as f64 / n,
            boom_freq: chunk.iter().filter(|o| o.2).count() as f64 / n,
        })
        .collect();
    Ok(TernaryGrid { resolution, replicates, points })
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k_buy: f64,
    pub k_sell: f64,
    pub theta_analytic: f64,
    pub theta_sim: f64,
    pub settlement: Settlement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitmentGrid {
    pub cells: Vec<GridCell>,
}

impl CommitmentGrid {
    pub fn cells_for(&self, settlement: Settlement) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().filter(move |c| c.settlement == settlement)
    }
}

/// Analytic and simulated Mo thresholds over shared Val/Mo buy (`k_plus`)
/// and sell (`k_minus`) commitments. Rand is removed, crash means a fall
/// below 0.01, and the start has `m0 = -0.001`.
pub fn commitment_grid(
    config: &ExperimentConfig,
    k_plus: &[f64],
    k_minus: &[f64],
    settlements: &[Settlement],
) -> Result<CommitmentGrid> {
    if k_plus.iter().chain(k_minus).any(|&k| !(k > 0.0 && k <= 1.0)) {
        return Err(Error::InvalidInput("commitments must lie in (0, 1]".into()));
    }
    let mut base = config.with_composition(1.0, 0.0, 0.0);
    base.crash = CrashPredicate::DropBelow(0.01);
    base.population.initial_momentum = -0.001;
    let tasks: Vec<(Settlement, f64, f64)> = settlements
        .iter()
        .flat_map(|&s| k_plus.iter().flat_map(move |&kp| k_minus.iter().map(move |&km| (s, kp, km))))
        .collect();
    let cells = tasks
        .par_iter()
        .map(|&(settlement, kp, km)| {
            let mut c = base;
            c.market.settlement = settlement;
            c.commitments = CommitmentParams {
                kv_buy: kp,
                km_buy: kp,
                kv_sell: km,
                km_sell: km,
                ..config.commitments
            };
            let constants = AnalysisConstants::from_rho(&c.market, &c.commitments, c.population.rho)?;
            let theta_analytic = mo_crash_threshold_analytic(&constants, c.population.rho)?;
            let theta_sim = threshold_search(&c, 0.0, 1.0, DEFAULT_THRESHOLD_TOL)?.theta;
            Ok(GridCell { k_buy: kp, k_sell: km, theta_analytic, theta_sim, settlement })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CommitmentGrid { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactEntry {
    pub impact: ImpactFunction,
    pub threshold: ThresholdResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub entries: Vec<ImpactEntry>,
}

pub const IMPACT_VARIANTS: [ImpactFunction; 3] = [
    ImpactFunction::RatioPower,
    ImpactFunction::PowerLaw { zeta: 1.0, liquidity: 1.0 },
    ImpactFunction::PowerLaw { zeta: 0.8, liquidity: 1.0 },
];

/// Mo thresholds under the ratio-power and two power-law impact functions.
pub fn impact_comparison(config: &ExperimentConfig) -> Result<ImpactReport> {
    let entries = IMPACT_VARIANTS
        .par_iter()
        .map(|&impact| {
            let mut c = *config;
            c.market.impact = impact;
            let threshold = threshold_search(&c, 0.0, 1.0, DEFAULT_THRESHOLD_TOL)?;
            Ok(ImpactEntry { impact, threshold })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImpactReport { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivalResult {
    pub run: RunResult,
    pub valuations: Vec<f64>,
    /// Trader indices of the Val traders within the run.
    pub val_indices: Vec<usize>,
    pub histogram: Histogram,
}

impl MultivalResult {
    pub fn mean_valuation(&self) -> f64 {
        self.valuations.iter().sum::<f64>() / self.valuations.len() as f64
    }

    /// Sample variance of the Val traders' wealth at time `t`.
    pub fn val_wealth_variance(&self, t: usize) -> f64 {
        let w: Vec<f64> = self.val_indices.iter().map(|&i| self.run.wealth[i][t]).collect();
        let n = w.len() as f64;
        if w.len() < 2 {
            return 0.0;
        }
        let m = w.iter().sum::<f64>() / n;
        w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Long run with `n_vals` gamma-distributed valuations, replicate `replicate`.
pub fn multival_run(
    config: &ExperimentConfig,
    n_vals: usize,
    horizon: usize,
    replicate: u64,
) -> Result<MultivalResult> {
    if n_vals == 0 {
        return Err(Error::InvalidInput("n_vals must be at least 1".into()));
    }
    let mut c = *config;
    c.population.n_vals = n_vals;
    c.market.horizon = horizon;
    let run = simulate(&c, &[replicate])?;
    let (val_indices, valuations): (Vec<usize>, Vec<f64>) = run
        .final_state
        .traders
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.valuation().map(|u| (i, u)))
        .unzip();
    let histogram = price_level_histogram(&run.prices, &valuations)?;
    Ok(MultivalResult { run, valuations, val_indices, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_counts_and_sums() {
        for r in [1, 2, 20, 99] {
            let pts = simplex_points(r);
            assert_eq!(pts.len(), TernaryGrid::point_count(r));
            for (v, m, q) in pts {
                assert!((v + m + q - 1.0).abs() <= 1e-12);
            }
        }
        assert_eq!(TernaryGrid::point_count(99), 5050);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(0.02, 0.30, 10);
        assert_eq!(v.len(), 10);
        assert_eq!(v[0], 0.02);
        assert!((v[9] - 0.30).abs() < 1e-15);
    }

    #[test]
    fn unbracketed_search_reports_boundary() {
        let mut c = ExperimentConfig::val_mo_threshold();
        c.market.horizon = 1;
        let r = threshold_search(&c, 0.0, 0.5, 1e-3).unwrap();
        assert!(!r.bracketed);
        assert_eq!(r.theta, 0.5);
    }

    #[test]
    fn val_corner_is_flat() {
        let c = ExperimentConfig::ternary();
        let g = ternary_sweep(&c, 1, 3).unwrap();
        let corner = g.points.iter().find(|p| p.val_frac == 1.0).unwrap();
        assert_eq!(corner.mean_drop, 0.0);
        assert_eq!(corner.crash_freq, 0.0);
    }
}
