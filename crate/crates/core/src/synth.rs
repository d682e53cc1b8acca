//! Synthetic daily bars with an optional planted predictive signal.
//!
//! Each stock follows a geometric random walk. On every day the open sits a random
//! log-distance `m` below or above the close, and the next close-to-close return is
//!
//! ```text
//! r[t+1] = market[t] + sector[g, t] + signal · (open[t] / close[t] − 1) + noise · ε
//! ```
//!
//! so the current day's open/close ratio, which is one Alpha360 feature, linearly
//! predicts the next return. With `sector_signal > 0` part of the predictive term is
//! the sector-average ratio instead of the stock's own.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::market_data::{Bar, BarStore, LOOKBACK_DAYS};

/// Standard deviation of the log open/close gap, which is also the scale of the
/// signal term at `signal = 1`.
pub const GAP_SCALE: f64 = 0.01;
/// Idiosyncratic return scale at `noise = 1`.
pub const NOISE_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub stocks: usize,
    pub days: usize,
    pub seed: u64,
    /// Coefficient on the open/close ratio in the next-day return.
    pub signal: f64,
    /// Multiplier on the idiosyncratic return noise.
    pub noise: f64,
    /// Stocks are dealt round-robin into this many sectors.
    pub sectors: usize,
    /// Standard deviation of the shared daily sector shock.
    pub sector_volatility: f64,
    /// Fraction of the signal term taken from the sector average ratio, in `[0, 1]`.
    pub sector_signal: f64,
    /// Standard deviation of the shared daily market return.
    pub market_volatility: f64,
    pub start: NaiveDate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            stocks: 20,
            days: 400,
            seed: 0,
            signal: 1.0,
            noise: 1.0,
            sectors: 1,
            sector_volatility: 0.0,
            sector_signal: 0.0,
            market_volatility: 0.005,
            start: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 2 stocks, got {0}")]
    TooFewStocks(usize),
    #[error("need at least {min} days for one feature row with a label, got {got}")]
    TooFewDays { min: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.stocks < 2 {
            return Err(SynthError::TooFewStocks(self.stocks));
        }
        if self.days < LOOKBACK_DAYS + 1 {
            return Err(SynthError::TooFewDays {
                min: LOOKBACK_DAYS + 1,
                got: self.days,
            });
        }
        if self.sectors < 1 || self.sectors > self.stocks {
            return Err(SynthError::Parameter(format!(
                "sectors must lie in 1..={}",
                self.stocks
            )));
        }
        if !(0.0..=1.0).contains(&self.sector_signal) {
            return Err(SynthError::Parameter(
                "sector_signal must lie in [0, 1]".into(),
            ));
        }
        if !self.signal.is_finite() {
            return Err(SynthError::Parameter("signal must be finite".into()));
        }
        let scales = [self.noise, self.sector_volatility, self.market_volatility];
        if scales.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(SynthError::Parameter(
                "noise and volatilities must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Weekdays starting at `start`, or the next weekday when `start` falls on a weekend.
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn stock_id(index: usize) -> String {
    format!("S{index:03}")
}

/// Generates bars for every stock on every business day. Deterministic per seed.
pub fn generate(spec: &SynthSpec) -> Result<BarStore, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let dates = business_days(spec.start, spec.days);
    let n = spec.stocks;
    let sector_of = |j: usize| j % spec.sectors;

    let mut close: Vec<f64> = (0..n)
        .map(|_| 10.0 * (0.5 * std_normal.sample(&mut rng)).exp())
        .collect();
    let mut bars = Vec::with_capacity(n * spec.days);
    let mut gap = vec![0.0; n];
    for (t, &date) in dates.iter().enumerate() {
        if t > 0 {
            let market = spec.market_volatility * std_normal.sample(&mut rng);
            let sector_shock: Vec<f64> = (0..spec.sectors)
                .map(|_| spec.sector_volatility * std_normal.sample(&mut rng))
                .collect();
            let mut sector_gap = vec![0.0; spec.sectors];
            let mut sector_size = vec![0usize; spec.sectors];
            for j in 0..n {
                sector_gap[sector_of(j)] += gap[j];
                sector_size[sector_of(j)] += 1;
            }
            for j in 0..n {
                let g = sector_of(j);
                let own = gap[j];
                let pooled = sector_gap[g] / sector_size[g] as f64;
                let predictor = (1.0 - spec.sector_signal) * own + spec.sector_signal * pooled;
                let r = market
                    + sector_shock[g]
                    + spec.signal * predictor
                    + spec.noise * NOISE_SCALE * std_normal.sample(&mut rng);
                close[j] *= (1.0 + r).max(0.05);
            }
        }
        for (j, c) in close.iter().enumerate() {
            let m = GAP_SCALE * std_normal.sample(&mut rng);
            let open = c * (-m).exp();
            gap[j] = open / c - 1.0;
            let hi_ext = (0.005 * std_normal.sample(&mut rng)).abs();
            let lo_ext = (0.005 * std_normal.sample(&mut rng)).abs();
            let high = open.max(*c) * hi_ext.exp();
            let low = open.min(*c) * (-lo_ext).exp();
            let vwap = ((open + high + low + c) / 4.0).clamp(low, high);
            let volume = (1.0e6 * (0.3 * std_normal.sample(&mut rng)).exp()).round();
            bars.push(Bar {
                stock_id: stock_id(j),
                date,
                open,
                high,
                low,
                close: *c,
                vwap,
                volume,
            });
        }
    }
    Ok(BarStore::from_bars(bars).expect("generated bars satisfy the bar invariants"))
}
