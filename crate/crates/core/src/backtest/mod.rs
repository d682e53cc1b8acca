//! Top-k dropout trading simulation and its performance report.
//!
//! Orders fill at the same day's close. New positions are equal-weighted from
//! the cash available after the day's sales; continuing positions are never
//! rebalanced. Ranking ties are broken by stock identifier.

mod report;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io;

use chrono::NaiveDate;
use log::debug;

pub use report::{compute_report, max_drawdown, BacktestReport, Benchmark};

use crate::market_data::BarStore;
use crate::model::ReturnVector;

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    /// Number of stocks held.
    pub k: usize,
    /// Maximum number of positions rotated per day.
    pub d: usize,
    /// Fraction of traded value charged on each side.
    pub transaction_cost_rate: f64,
    pub initial_cash: f64,
    pub trading_days_per_year: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            k: 50,
            d: 5,
            transaction_cost_rate: 0.0,
            initial_cash: 1.0,
            trading_days_per_year: 252,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.k < 1 || self.d < 1 || self.d > self.k {
            return Err(BacktestError::Config(format!(
                "need 1 <= d <= k, got k={} d={}",
                self.k, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.transaction_cost_rate) {
            return Err(BacktestError::Config(
                "transaction_cost_rate must lie in [0, 1)".into(),
            ));
        }
        if self.initial_cash.is_nan() || self.initial_cash <= 0.0 || self.trading_days_per_year == 0
        {
            return Err(BacktestError::Config(
                "initial_cash and trading_days_per_year must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BacktestError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("only {available} tradable stocks on {date}, cannot bootstrap k={k}")]
    Bootstrap {
        date: NaiveDate,
        available: usize,
        k: usize,
    },
    #[error("predictions are not in chronological order at {0}")]
    Unordered(NaiveDate),
    #[error("no price for held stock {stock_id} on or before {date}")]
    MissingPrice { stock_id: String, date: NaiveDate },
    #[error("benchmark error: {0}")]
    Benchmark(String),
    #[error("need at least 2 ledger dates, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Buy,
    Sell,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Buy => "buy",
            Action::Sell => "sell",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub action: Action,
    pub stock_id: String,
    pub shares: f64,
    pub price: f64,
    pub cost: f64,
    pub cash_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub date: NaiveDate,
    pub trades: Vec<Trade>,
    pub holdings: BTreeMap<String, f64>,
    /// Close (or last known close) used to value each holding.
    pub marks: BTreeMap<String, f64>,
    pub cash: f64,
    pub equity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub initial_cash: f64,
    pub entries: Vec<LedgerEntry>,
    pub warnings: Vec<String>,
}

impl BacktestLedger {
    pub fn equity_curve(&self) -> Vec<(NaiveDate, f64)> {
        self.entries.iter().map(|e| (e.date, e.equity)).collect()
    }

    /// Daily strategy returns between consecutive ledger dates.
    pub fn daily_returns(&self) -> Vec<(NaiveDate, f64)> {
        self.entries
            .windows(2)
            .map(|w| (w[1].date, w[1].equity / w[0].equity - 1.0))
            .collect()
    }

    /// `date,action,stock_id,shares,price,cost,cash_after,equity_after`. Each date
    /// ends with a `mark` row carrying the end-of-day cash and equity.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "date",
            "action",
            "stock_id",
            "shares",
            "price",
            "cost",
            "cash_after",
            "equity_after",
        ])?;
        let mut prev_holdings: BTreeMap<String, f64> = BTreeMap::new();
        for e in &self.entries {
            let date = e.date.to_string();
            let mut holdings = prev_holdings.clone();
            for t in &e.trades {
                match t.action {
                    Action::Buy => *holdings.entry(t.stock_id.clone()).or_insert(0.0) += t.shares,
                    Action::Sell => {
                        holdings.remove(&t.stock_id);
                    }
                }
                let value: f64 = holdings
                    .iter()
                    .map(|(s, q)| q * e.marks.get(s).copied().unwrap_or(0.0))
                    .sum();
                w.write_record([
                    date.clone(),
                    t.action.as_str().into(),
                    t.stock_id.clone(),
                    t.shares.to_string(),
                    t.price.to_string(),
                    t.cost.to_string(),
                    t.cash_after.to_string(),
                    (t.cash_after + value).to_string(),
                ])?;
            }
            w.write_record([
                date,
                "mark".into(),
                String::new(),
                "0".into(),
                "0".into(),
                "0".into(),
                e.cash.to_string(),
                e.equity.to_string(),
            ])?;
            prev_holdings = e.holdings.clone();
        }
        w.flush()?;
        Ok(())
    }
}

/// `(score, id)` pairs ordered best first: higher score, then lower identifier.
fn better(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Runs the top-k dropout strategy over dated predictions.
///
/// The first date buys the `k` best-predicted tradable stocks. Every later date
/// pairs the held stocks from worst up with the unheld candidates from best down
/// and swaps each pair while the candidate ranks strictly better, at most `d`
/// swaps. Stocks without a bar that day can be neither bought nor sold.
pub fn run_topk_dropout(
    predictions: &[ReturnVector],
    bars: &BarStore,
    config: &BacktestConfig,
) -> Result<BacktestLedger, BacktestError> {
    config.validate()?;
    if let Some(first) = predictions.first() {
        if config.k > first.stock_ids.len() {
            return Err(BacktestError::Config(format!(
                "k={} exceeds the {} stocks predicted on {}",
                config.k,
                first.stock_ids.len(),
                first.date
            )));
        }
    }
    for w in predictions.windows(2) {
        if w[0].date >= w[1].date {
            return Err(BacktestError::Unordered(w[1].date));
        }
    }

    let c = config.transaction_cost_rate;
    let mut cash = config.initial_cash;
    let mut holdings: BTreeMap<String, f64> = BTreeMap::new();
    let mut entries = Vec::with_capacity(predictions.len());
    let mut warnings = Vec::new();

    for pv in predictions {
        let date = pv.date;
        let scores: HashMap<&str, f64> = pv
            .stock_ids
            .iter()
            .map(String::as_str)
            .zip(pv.values.iter().copied())
            .collect();
        let tradable = |id: &str| bars.bar(id, date).map(|b| b.close);
        let mut trades = Vec::new();

        let mut ranked: Vec<(f64, &str)> = pv
            .stock_ids
            .iter()
            .zip(&pv.values)
            .filter(|(id, _)| tradable(id).is_some())
            .map(|(id, &s)| (s, id.as_str()))
            .collect();
        ranked.sort_by(|a, b| better(*a, *b));

        let (sells, buys): (Vec<String>, Vec<String>) = if holdings.is_empty() {
            if ranked.len() < config.k {
                return Err(BacktestError::Bootstrap {
                    date,
                    available: ranked.len(),
                    k: config.k,
                });
            }
            (
                Vec::new(),
                ranked
                    .iter()
                    .take(config.k)
                    .map(|(_, id)| id.to_string())
                    .collect(),
            )
        } else {
            let mut held: Vec<(f64, &str)> = holdings
                .keys()
                .filter(|id| tradable(id).is_some())
                .filter_map(|id| scores.get(id.as_str()).map(|&s| (s, id.as_str())))
                .collect();
            held.sort_by(|a, b| better(*b, *a));
            let candidates: Vec<(f64, &str)> = ranked
                .iter()
                .copied()
                .filter(|(_, id)| !holdings.contains_key(*id))
                .collect();
            let mut sells = Vec::new();
            let mut buys = Vec::new();
            for (h, cand) in held.iter().zip(&candidates).take(config.d) {
                if better(*cand, *h) != Ordering::Less {
                    break;
                }
                sells.push(h.1.to_string());
                buys.push(cand.1.to_string());
            }
            if sells.len() < config.d && sells.len() == candidates.len() && held.len() > sells.len()
            {
                let msg = format!(
                    "{date}: only {} buyable candidates for d={}",
                    candidates.len(),
                    config.d
                );
                debug!("{msg}");
                warnings.push(msg);
            }
            (sells, buys)
        };

        for id in &sells {
            let price = tradable(id).expect("sell candidates are tradable");
            let shares = holdings.remove(id).expect("sold stock is held");
            let gross = shares * price;
            let cost = gross * c;
            cash += gross - cost;
            trades.push(Trade {
                action: Action::Sell,
                stock_id: id.clone(),
                shares,
                price,
                cost,
                cash_after: cash,
            });
        }
        if !buys.is_empty() {
            let alloc = cash / buys.len() as f64;
            for id in &buys {
                let price = tradable(id).expect("buy candidates are tradable");
                let shares = alloc / (price * (1.0 + c));
                let cost = shares * price * c;
                cash -= shares * price + cost;
                holdings.insert(id.clone(), shares);
                trades.push(Trade {
                    action: Action::Buy,
                    stock_id: id.clone(),
                    shares,
                    price,
                    cost,
                    cash_after: cash,
                });
            }
        }

        let mut marks = BTreeMap::new();
        let mut value = 0.0;
        for (id, &shares) in &holdings {
            let price = bars
                .last_close(id, date)
                .ok_or_else(|| BacktestError::MissingPrice {
                    stock_id: id.clone(),
                    date,
                })?;
            marks.insert(id.clone(), price);
            value += shares * price;
        }
        entries.push(LedgerEntry {
            date,
            trades,
            holdings: holdings.clone(),
            marks,
            cash,
            equity: cash + value,
        });
    }
    Ok(BacktestLedger {
        initial_cash: config.initial_cash,
        entries,
        warnings,
    })
}
