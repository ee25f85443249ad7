//! Order-generating strategies and population construction.
//!
//! Bids are always cash amounts and offers are always asset quantities.
//! Every function here guarantees `bid <= cash` and `offer <= asset`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::engine::{CommitmentParams, MarketState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RandMode {
    /// Uniform fractions of cash (bids) and asset (offers).
    Basic,
    /// Uniform fractions of marked-to-market wealth, falling back to the
    /// smaller holding when either side drops below its floor.
    Refined { critical_cash: f64, critical_asset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TraderKind {
    Val { valuation: f64 },
    Mo,
    Rand(RandMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraderState {
    pub cash: f64,
    pub asset: f64,
    pub kind: TraderKind,
}

/// A single trader's order for one step: cash bid and asset offer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Order {
    pub bid: f64,
    pub offer: f64,
}

impl TraderState {
    pub fn wealth(&self, price: f64) -> f64 {
        self.cash + self.asset * price
    }

    pub fn is_val(&self) -> bool {
        matches!(self.kind, TraderKind::Val { .. })
    }

    pub fn valuation(&self) -> Option<f64> {
        match self.kind {
            TraderKind::Val { valuation } => Some(valuation),
            _ => None,
        }
    }

    /// Order placed at the prevailing price and momentum.
    pub fn order<R: Rng + ?Sized>(
        &self,
        price: f64,
        momentum: f64,
        k: &CommitmentParams,
        rng: &mut R,
    ) -> Order {
        let (bid, offer) = match self.kind {
            TraderKind::Val { valuation } => {
                val_orders(price, valuation, self.cash, self.asset, k.kv_buy, k.kv_sell)
            }
            TraderKind::Mo => mo_orders(momentum, self.cash, self.asset, k.km_buy, k.km_sell),
            TraderKind::Rand(RandMode::Basic) => {
                rand_orders_basic(self.cash, self.asset, k.kr_buy, k.kr_sell, rng)
            }
            TraderKind::Rand(RandMode::Refined {
                critical_cash,
                critical_asset,
            }) => rand_orders_refined(
                self.cash,
                self.asset,
                price,
                critical_cash,
                critical_asset,
                k.kr_buy,
                k.kr_sell,
                rng,
            ),
        };
        Order { bid, offer }
    }
}

/// Valuation trader: sells above `u`, buys below, does nothing at `p == u`.
pub fn val_orders(p: f64, u: f64, cash: f64, asset: f64, kv_buy: f64, kv_sell: f64) -> (f64, f64) {
    if p > u {
        (0.0, kv_sell * asset)
    } else if p < u {
        (kv_buy * cash, 0.0)
    } else {
        (0.0, 0.0)
    }
}

/// Momentum trader: buys on positive momentum, sells on negative.
pub fn mo_orders(m: f64, cash: f64, asset: f64, km_buy: f64, km_sell: f64) -> (f64, f64) {
    if m > 0.0 {
        (km_buy * cash, 0.0)
    } else if m < 0.0 {
        (0.0, km_sell * asset)
    } else {
        (0.0, 0.0)
    }
}

// Both draws are always consumed, bid first, so streams stay aligned
// across trader mixes and commitment settings.
fn draw_pair<R: Rng + ?Sized>(rng: &mut R, k_buy: f64, k_sell: f64) -> (f64, f64) {
    let ub: f64 = rng.random();
    let us: f64 = rng.random();
    (ub * k_buy, us * k_sell)
}

pub fn rand_orders_basic<R: Rng + ?Sized>(
    cash: f64,
    asset: f64,
    kr_buy: f64,
    kr_sell: f64,
    rng: &mut R,
) -> (f64, f64) {
    let (fb, fs) = draw_pair(rng, kr_buy, kr_sell);
    (fb * cash, fs * asset)
}

#[allow(clippy::too_many_arguments)]
pub fn rand_orders_refined<R: Rng + ?Sized>(
    cash: f64,
    asset: f64,
    p: f64,
    critical_cash: f64,
    critical_asset: f64,
    kr_buy: f64,
    kr_sell: f64,
    rng: &mut R,
) -> (f64, f64) {
    let (fb, fs) = draw_pair(rng, kr_buy, kr_sell);
    let asset_value = asset * p;
    let reference = if cash < critical_cash || asset_value < critical_asset {
        cash.min(asset_value)
    } else {
        cash + asset_value
    };
    let bid = (fb * reference).min(cash);
    let offer = ((fs * reference) / p).min(asset);
    (bid, offer)
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::InvalidInput(format!(
            "gamma parameters must be positive, got shape={shape}, rate={rate}"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ValuationSource {
    Fixed { u: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl ValuationSource {
    /// Reference valuation used to size the total asset stock.
    pub fn reference(&self) -> f64 {
        match *self {
            ValuationSource::Fixed { u } => u,
            ValuationSource::Gamma { shape, rate } => shape / rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RandTemplate {
    Basic,
    /// Floors are this fraction of the initial cash and initial asset value.
    Refined { critical_fraction: f64 },
}

/// Initial composition of the market. The Val fraction is split evenly
/// across `n_vals` traders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub val_frac: f64,
    pub mo_frac: f64,
    pub rand_frac: f64,
    pub n_vals: usize,
    pub valuation: ValuationSource,
    pub rand_mode: RandTemplate,
    pub total_cash: f64,
    pub initial_price: f64,
    pub initial_momentum: f64,
    pub rho: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            val_frac: 1.0,
            mo_frac: 0.0,
            rand_frac: 0.0,
            n_vals: 1,
            valuation: ValuationSource::Fixed { u: 1.0 },
            rand_mode: RandTemplate::Refined {
                critical_fraction: 0.2,
            },
            total_cash: 1.0,
            initial_price: 1.0,
            initial_momentum: 0.0,
            rho: 4.0,
        }
    }
}

impl PopulationSpec {
    /// Two-class Val/Mo population with Mo holding wealth fraction `theta`.
    pub fn val_mo(theta: f64) -> Self {
        Self {
            val_frac: 1.0 - theta,
            mo_frac: theta,
            rand_frac: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("val", self.val_frac), ("mo", self.mo_frac), ("rand", self.rand_frac)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} fraction {f} outside [0, 1]")));
            }
        }
        let sum = self.val_frac + self.mo_frac + self.rand_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("wealth fractions sum to {sum}, expected 1")));
        }
        if self.val_frac > 0.0 && self.n_vals == 0 {
            return Err(Error::Config("val fraction is positive but n_vals = 0".into()));
        }
        match self.valuation {
            ValuationSource::Fixed { u } if !(u > 0.0) => {
                return Err(Error::Config(format!("valuation must be positive, got {u}")))
            }
            ValuationSource::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return Err(Error::Config("gamma shape and rate must be positive".into()))
            }
            _ => {}
        }
        if let RandTemplate::Refined { critical_fraction } = self.rand_mode {
            if !(0.0..=1.0).contains(&critical_fraction) {
                return Err(Error::Config(format!(
                    "critical fraction {critical_fraction} outside [0, 1]"
                )));
            }
        }
        if !(self.total_cash > 0.0 && self.initial_price > 0.0 && self.rho > 0.0) {
            return Err(Error::Config("cash, initial price and rho must be positive".into()));
        }
        if !self.initial_momentum.is_finite() {
            return Err(Error::Config("initial momentum must be finite".into()));
        }
        Ok(())
    }
}

/// Build the initial market. Traders with zero wealth fraction are omitted;
/// order is Vals, then Mo, then Rand.
pub fn init_population<R: Rng + ?Sized>(spec: &PopulationSpec, rng: &mut R) -> Result<MarketState> {
    spec.validate()?;
    let cash_total = spec.total_cash;
    let asset_total = spec.rho * cash_total / spec.valuation.reference();
    let mut traders = Vec::new();

    if spec.val_frac > 0.0 {
        let share = spec.val_frac / spec.n_vals as f64;
        for _ in 0..spec.n_vals {
            let valuation = match spec.valuation {
                ValuationSource::Fixed { u } => u,
                ValuationSource::Gamma { shape, rate } => sample_gamma(shape, rate, rng)?,
            };
            traders.push(TraderState {
                cash: share * cash_total,
                asset: share * asset_total,
                kind: TraderKind::Val { valuation },
            });
        }
    }
    if spec.mo_frac > 0.0 {
        traders.push(TraderState {
            cash: spec.mo_frac * cash_total,
            asset: spec.mo_frac * asset_total,
            kind: TraderKind::Mo,
        });
    }
    if spec.rand_frac > 0.0 {
        let cash = spec.rand_frac * cash_total;
        let asset = spec.rand_frac * asset_total;
        let mode = match spec.rand_mode {
            RandTemplate::Basic => RandMode::Basic,
            RandTemplate::Refined { critical_fraction } => RandMode::Refined {
                critical_cash: critical_fraction * cash,
                critical_asset: critical_fraction * asset * spec.initial_price,
            },
        };
        traders.push(TraderState {
            cash,
            asset,
            kind: TraderKind::Rand(mode),
        });
    }

    Ok(MarketState::new(
        spec.initial_price,
        spec.initial_momentum,
        traders,
        cash_total,
        asset_total,
        spec.valuation.reference(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn val_rules() {
        assert_eq!(val_orders(2.0, 1.0, 10.0, 10.0, 0.1, 0.1), (0.0, 1.0));
        assert_eq!(val_orders(0.5, 1.0, 10.0, 10.0, 0.1, 0.1), (1.0, 0.0));
        assert_eq!(val_orders(1.0, 1.0, 10.0, 10.0, 0.1, 0.1), (0.0, 0.0));
    }

    #[test]
    fn mo_rules() {
        assert_eq!(mo_orders(-0.001, 10.0, 10.0, 0.1, 0.1), (0.0, 1.0));
        assert_eq!(mo_orders(0.001, 10.0, 10.0, 0.1, 0.1), (1.0, 0.0));
        assert_eq!(mo_orders(0.0, 10.0, 10.0, 0.1, 0.1), (0.0, 0.0));
    }

    #[test]
    fn rand_basic_degenerate() {
        let mut rng = rng_from_seed(1);
        assert_eq!(rand_orders_basic(5.0, 5.0, 0.0, 0.0, &mut rng), (0.0, 0.0));
        assert_eq!(rand_orders_basic(0.0, 0.0, 0.1, 0.1, &mut rng), (0.0, 0.0));
    }

    #[test]
    fn rand_basic_mean_offer() {
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| rand_orders_basic(1.0, 1.0, 0.1, 0.1, &mut rng).1)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.05).abs() <= 0.001, "mean offer {mean}");
    }

    #[test]
    fn refined_rand_zero_cash_places_nothing() {
        let mut rng = rng_from_seed(3);
        let (b, o) = rand_orders_refined(0.0, 5.0, 1.0, 0.2, 0.2, 0.1, 0.1, &mut rng);
        assert_eq!((b, o), (0.0, 0.0));
    }

    #[test]
    fn refined_rand_scales_with_wealth_when_unconstrained() {
        let mut a = rng_from_seed(4);
        let mut b = rng_from_seed(4);
        let (bid, offer) = rand_orders_refined(10.0, 10.0, 2.0, 1.0, 1.0, 0.1, 0.1, &mut a);
        let ub: f64 = b.random();
        let us: f64 = b.random();
        assert_eq!(bid, (ub * 0.1 * 30.0).min(10.0));
        assert_eq!(offer, (us * 0.1 * 30.0 / 2.0).min(10.0));
    }

    #[test]
    fn refined_rand_constrained_by_lower_holding() {
        let mut a = rng_from_seed(5);
        let mut b = rng_from_seed(5);
        // cash below its floor: reference is min(cash, asset value) = 0.5
        let (bid, offer) = rand_orders_refined(0.5, 10.0, 1.0, 1.0, 1.0, 0.1, 0.1, &mut a);
        let ub: f64 = b.random();
        let us: f64 = b.random();
        assert_eq!(bid, ub * 0.1 * 0.5);
        assert_eq!(offer, us * 0.1 * 0.5);
    }

    #[test]
    fn gamma_moments() {
        let mut rng = rng_from_seed(6);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_gamma(8.0, 8.0, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() <= 0.002, "mean {mean}");
        assert!((var - 0.125).abs() <= 0.005, "var {var}");
    }

    #[test]
    fn gamma_shape_one_is_exponential() {
        let mut rng = rng_from_seed(7);
        let n = 1_000_000;
        let tail = (0..n)
            .filter(|_| sample_gamma(1.0, 1.0, &mut rng).unwrap() > 1.0)
            .count() as f64
            / n as f64;
        assert!((tail - (-1.0f64).exp()).abs() <= 0.005, "tail {tail}");
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut rng = rng_from_seed(8);
        assert!(sample_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn all_val_population() {
        let mut rng = rng_from_seed(9);
        let st = init_population(&PopulationSpec::default(), &mut rng).unwrap();
        assert_eq!(st.traders.len(), 1);
        assert_eq!(st.traders[0].cash, 1.0);
        assert_eq!(st.traders[0].asset, 4.0);
    }

    #[test]
    fn val_mo_split() {
        let mut rng = rng_from_seed(10);
        let st = init_population(&PopulationSpec::val_mo(0.216), &mut rng).unwrap();
        let mo = st.traders.iter().find(|t| t.kind == TraderKind::Mo).unwrap();
        assert!((mo.cash - 0.216).abs() < 1e-15);
        assert!((mo.asset - 0.216 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn ten_vals_with_half_rand() {
        let mut rng = rng_from_seed(11);
        let spec = PopulationSpec {
            val_frac: 0.5,
            mo_frac: 0.0,
            rand_frac: 0.5,
            n_vals: 10,
            valuation: ValuationSource::Gamma { shape: 8.0, rate: 8.0 },
            ..PopulationSpec::default()
        };
        let st = init_population(&spec, &mut rng).unwrap();
        let vals: Vec<_> = st.traders.iter().filter(|t| t.is_val()).collect();
        assert_eq!(vals.len(), 10);
        for v in &vals {
            assert!((v.cash - 0.05).abs() < 1e-15);
            assert!((v.asset - 0.05 * st.total_asset).abs() < 1e-15);
        }
        let cash: f64 = st.traders.iter().map(|t| t.cash).sum();
        assert!((cash - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut rng = rng_from_seed(12);
        let spec = PopulationSpec {
            val_frac: 0.5,
            mo_frac: 0.2,
            ..PopulationSpec::default()
        };
        assert!(matches!(init_population(&spec, &mut rng), Err(Error::Config(_))));
    }
}
