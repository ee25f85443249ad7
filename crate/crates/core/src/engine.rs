//! Discrete-time market mechanism.
//!
//! One step collects orders at the prevailing price, moves the price with
//! the configured impact function, fills orders at the settlement price and
//! finally updates momentum. Purchase volume `q_p` is measured in asset
//! units: total bid cash divided by the prevailing price.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::metrics::CrashPredicate;
use crate::seed::rng_from_seed;
use crate::traders::TraderState;

/// Runs abort once the price drops below this level.
pub const PRICE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ImpactFunction {
    /// `p' = p (q_p / q_s)^lambda`, capped at `e^{±eta}`.
    RatioPower,
    /// `log p` moves by `sign(q_p - q_s) |(q_p - q_s) / liquidity|^zeta`, capped at `eta`.
    PowerLaw { zeta: f64, liquidity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Settlement {
    UpdatedPrice,
    CurrentPrice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub lambda: f64,
    /// Cap on `|log(p'/p)|` per step.
    pub eta: f64,
    pub mu: f64,
    pub impact: ImpactFunction,
    pub settlement: Settlement,
    pub horizon: usize,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            lambda: 0.04,
            eta: 0.1,
            mu: 0.002,
            impact: ImpactFunction::RatioPower,
            settlement: Settlement::UpdatedPrice,
            horizon: 250,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if let ImpactFunction::PowerLaw { zeta, liquidity } = self.impact {
            if !(zeta > 0.0 && zeta.is_finite()) {
                return Err(Error::Config(format!("zeta must be > 0, got {zeta}")));
            }
            if !(liquidity > 0.0 && liquidity.is_finite()) {
                return Err(Error::Config(format!("liquidity must be > 0, got {liquidity}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step commitment proportions: `*_buy` of cash, `*_sell` of asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitmentParams {
    pub kv_buy: f64,
    pub kv_sell: f64,
    pub km_buy: f64,
    pub km_sell: f64,
    pub kr_buy: f64,
    pub kr_sell: f64,
}

impl Default for CommitmentParams {
    fn default() -> Self {
        Self::uniform(0.1)
    }
}

impl CommitmentParams {
    pub fn uniform(k: f64) -> Self {
        Self {
            kv_buy: k,
            kv_sell: k,
            km_buy: k,
            km_sell: k,
            kr_buy: k,
            kr_sell: k,
        }
    }

    /// Val and Mo share `k_plus` for buying and `k_minus` for selling.
    pub fn shared(k_plus: f64, k_minus: f64) -> Self {
        Self {
            kv_buy: k_plus,
            kv_sell: k_minus,
            km_buy: k_plus,
            km_sell: k_minus,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("kv_buy", self.kv_buy),
            ("kv_sell", self.kv_sell),
            ("km_buy", self.km_buy),
            ("km_sell", self.km_sell),
            ("kr_buy", self.kr_buy),
            ("kr_sell", self.kr_sell),
        ];
        for (name, k) in all {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::Config(format!("{name} = {k} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub price: f64,
    pub momentum: f64,
    pub time: usize,
    pub traders: Vec<TraderState>,
    pub total_cash: f64,
    pub total_asset: f64,
    /// Reference valuation used for diagnostics and the initial asset stock.
    pub reference_value: f64,
}

impl MarketState {
    pub fn new(
        price: f64,
        momentum: f64,
        traders: Vec<TraderState>,
        total_cash: f64,
        total_asset: f64,
        reference_value: f64,
    ) -> Self {
        Self {
            price,
            momentum,
            time: 0,
            traders,
            total_cash,
            total_asset,
            reference_value,
        }
    }

    pub fn cash_sum(&self) -> f64 {
        self.traders.iter().map(|t| t.cash).sum()
    }

    pub fn asset_sum(&self) -> f64 {
        self.traders.iter().map(|t| t.asset).sum()
    }

    pub fn wealths(&self) -> Vec<f64> {
        self.traders.iter().map(|t| t.wealth(self.price)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOrders {
    /// Cash amounts.
    pub bids: Vec<f64>,
    /// Asset quantities.
    pub offers: Vec<f64>,
    /// Purchase volume in asset units at the prevailing price.
    pub q_p: f64,
    pub q_s: f64,
}

impl StepOrders {
    pub fn none(n: usize) -> Self {
        Self {
            bids: vec![0.0; n],
            offers: vec![0.0; n],
            q_p: 0.0,
            q_s: 0.0,
        }
    }

    fn from_parts(bids: Vec<f64>, offers: Vec<f64>, price: f64) -> Self {
        let q_p = bids.iter().sum::<f64>() / price;
        let q_s = offers.iter().sum::<f64>();
        Self {
            bids,
            offers,
            q_p,
            q_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Time index after the step.
    pub time: usize,
    pub old_price: f64,
    pub new_price: f64,
    pub q_p: f64,
    pub q_s: f64,
    /// Asset volume that changed hands.
    pub executed: f64,
    pub momentum_before: f64,
    pub momentum_after: f64,
    pub cap_hit: bool,
}

/// Ratio-power update with the `e^{±eta}` cap. Returns the new price and
/// whether the cap was binding.
pub fn update_price_ratio(p: f64, q_p: f64, q_s: f64, lambda: f64, eta: f64) -> Result<(f64, bool)> {
    for (n, x) in [("p", p), ("q_p", q_p), ("q_s", q_s), ("lambda", lambda), ("eta", eta)] {
        ensure_finite(n, x)?;
    }
    if !(p > 0.0) || q_p < 0.0 || q_s < 0.0 {
        return Err(Error::InvalidInput(format!(
            "need p > 0 and non-negative volumes (p={p}, q_p={q_p}, q_s={q_s})"
        )));
    }
    let (dlog, capped) = match (q_p > 0.0, q_s > 0.0) {
        (false, false) => (0.0, false),
        (true, false) => (eta, true),
        (false, true) => (-eta, true),
        (true, true) => {
            let raw = lambda * (q_p / q_s).ln();
            if raw.abs() > eta {
                (eta.copysign(raw), true)
            } else {
                (raw, false)
            }
        }
    };
    Ok((p * dlog.exp(), capped))
}

/// Power-law update on the order difference with the `eta` cap on the log-price move.
pub fn update_price_powerlaw(
    p: f64,
    q_p: f64,
    q_s: f64,
    liquidity: f64,
    zeta: f64,
    eta: f64,
) -> Result<(f64, bool)> {
    for (n, x) in [
        ("p", p),
        ("q_p", q_p),
        ("q_s", q_s),
        ("liquidity", liquidity),
        ("zeta", zeta),
        ("eta", eta),
    ] {
        ensure_finite(n, x)?;
    }
    if !(p > 0.0 && liquidity > 0.0 && zeta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need p, liquidity, zeta > 0 (p={p}, liquidity={liquidity}, zeta={zeta})"
        )));
    }
    let diff = q_p - q_s;
    if diff == 0.0 {
        return Ok((p, false));
    }
    let magnitude = (diff.abs() / liquidity).powf(zeta);
    let capped = magnitude > eta;
    let dlog = magnitude.min(eta).copysign(diff);
    Ok((p * dlog.exp(), capped))
}

pub fn update_momentum(m: f64, p: f64, p_new: f64, mu: f64) -> f64 {
    mu * (p_new / p).ln() + (1.0 - mu) * m
}

pub fn update_price(p: f64, q_p: f64, q_s: f64, params: &MarketParams) -> Result<(f64, bool)> {
    match params.impact {
        ImpactFunction::RatioPower => update_price_ratio(p, q_p, q_s, params.lambda, params.eta),
        ImpactFunction::PowerLaw { zeta, liquidity } => {
            update_price_powerlaw(p, q_p, q_s, liquidity, zeta, params.eta)
        }
    }
}

/// Orders of every trader at the state's current price and momentum.
pub fn collect_orders<R: Rng + ?Sized>(
    state: &MarketState,
    commitments: &CommitmentParams,
    rng: &mut R,
) -> StepOrders {
    let (bids, offers) = state
        .traders
        .iter()
        .map(|t| {
            let o = t.order(state.price, state.momentum, commitments, rng);
            (o.bid, o.offer)
        })
        .unzip();
    StepOrders::from_parts(bids, offers, state.price)
}

/// Fill orders at `p_settle`. Bids stay fixed in cash, offers in asset;
/// the larger side is scaled down uniformly to parity. Returns the asset
/// volume exchanged.
pub fn settle(state: &mut MarketState, orders: &StepOrders, p_settle: f64) -> Result<f64> {
    if !(p_settle > 0.0 && p_settle.is_finite()) {
        return Err(Error::InvalidInput(format!("settlement price must be > 0, got {p_settle}")));
    }
    if orders.bids.len() != state.traders.len() || orders.offers.len() != state.traders.len() {
        return Err(Error::InvalidInput("order vector length mismatch".into()));
    }
    let demand: f64 = orders.bids.iter().sum::<f64>() / p_settle;
    let supply: f64 = orders.offers.iter().sum();
    if demand <= 0.0 || supply <= 0.0 {
        return Ok(0.0);
    }
    let (buy_scale, sell_scale) = if demand > supply {
        (supply / demand, 1.0)
    } else {
        (1.0, demand / supply)
    };
    for ((t, &bid), &offer) in state.traders.iter_mut().zip(&orders.bids).zip(&orders.offers) {
        let paid = bid * buy_scale;
        let bought = paid / p_settle;
        let sold = offer * sell_scale;
        t.asset = t.asset + bought - sold;
        t.cash = t.cash + sold * p_settle - paid;
    }
    Ok(demand.min(supply))
}

/// Advance the state by one step in place.
pub fn step_mut<R: Rng + ?Sized>(
    state: &mut MarketState,
    params: &MarketParams,
    commitments: &CommitmentParams,
    rng: &mut R,
) -> Result<StepRecord> {
    let orders = collect_orders(state, commitments, rng);
    let old_price = state.price;
    let (new_price, cap_hit) = update_price(old_price, orders.q_p, orders.q_s, params)?;
    let p_settle = match params.settlement {
        Settlement::UpdatedPrice => new_price,
        Settlement::CurrentPrice => old_price,
    };
    let executed = settle(state, &orders, p_settle)?;
    let momentum_before = state.momentum;
    state.momentum = update_momentum(momentum_before, old_price, new_price, params.mu);
    state.price = new_price;
    state.time += 1;
    Ok(StepRecord {
        time: state.time,
        old_price,
        new_price,
        q_p: orders.q_p,
        q_s: orders.q_s,
        executed,
        momentum_before,
        momentum_after: state.momentum,
        cap_hit,
    })
}

pub fn step<R: Rng + ?Sized>(
    state: &MarketState,
    params: &MarketParams,
    commitments: &CommitmentParams,
    rng: &mut R,
) -> Result<(MarketState, StepRecord)> {
    let mut next = state.clone();
    let rec = step_mut(&mut next, params, commitments, rng)?;
    Ok((next, rec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Prices including the initial one.
    pub prices: Vec<f64>,
    pub momenta: Vec<f64>,
    /// `wealth[i][t]`: trader `i` marked to market at time `t`.
    pub wealth: Vec<Vec<f64>>,
    pub records: Vec<StepRecord>,
    /// The price fell below [`PRICE_FLOOR`] and the run stopped early.
    pub aborted: bool,
    pub final_state: MarketState,
}

impl RunResult {
    pub fn crash_step(&self, predicate: &CrashPredicate) -> Option<usize> {
        crate::metrics::detect_crash(&self.prices, predicate)
    }

    pub fn boom_step(&self, predicate: &CrashPredicate) -> Option<usize> {
        crate::metrics::detect_boom(&self.prices, predicate)
    }

    pub fn crashed(&self, predicate: &CrashPredicate) -> bool {
        self.aborted || self.crash_step(predicate).is_some()
    }

    pub fn max_relative_drop(&self) -> f64 {
        crate::metrics::max_relative_drop(&self.prices)
    }
}

pub fn run(
    initial: &MarketState,
    params: &MarketParams,
    commitments: &CommitmentParams,
    seed: u64,
) -> Result<RunResult> {
    let mut rng = rng_from_seed(seed);
    run_with_rng(initial, params, commitments, &mut rng)
}

pub fn run_with_rng<R: Rng + ?Sized>(
    initial: &MarketState,
    params: &MarketParams,
    commitments: &CommitmentParams,
    rng: &mut R,
) -> Result<RunResult> {
    params.validate()?;
    commitments.validate()?;
    let mut state = initial.clone();
    let n = state.traders.len();
    let mut prices = Vec::with_capacity(params.horizon + 1);
    let mut momenta = Vec::with_capacity(params.horizon + 1);
    let mut wealth: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(params.horizon + 1)).collect();
    let mut records = Vec::with_capacity(params.horizon);
    let push = |s: &MarketState, prices: &mut Vec<f64>, momenta: &mut Vec<f64>, wealth: &mut Vec<Vec<f64>>| {
        prices.push(s.price);
        momenta.push(s.momentum);
        for (w, t) in wealth.iter_mut().zip(&s.traders) {
            w.push(t.wealth(s.price));
        }
    };
    push(&state, &mut prices, &mut momenta, &mut wealth);
    let mut aborted = false;
    for _ in 0..params.horizon {
        records.push(step_mut(&mut state, params, commitments, rng)?);
        push(&state, &mut prices, &mut momenta, &mut wealth);
        if state.price < PRICE_FLOOR {
            aborted = true;
            break;
        }
    }
    Ok(RunResult {
        prices,
        momenta,
        wealth,
        records,
        aborted,
        final_state: state,
    })
}
