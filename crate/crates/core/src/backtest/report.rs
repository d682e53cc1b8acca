use std::collections::BTreeMap;
use std::io;

use chrono::NaiveDate;

use super::{BacktestConfig, BacktestError, BacktestLedger};
use crate::market_data::BarStore;
use crate::model::ReturnVector;

/// Reference series for the information ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum Benchmark {
    /// Equal-weight daily return of the stocks predicted on the previous ledger date.
    EqualWeightUniverse,
    /// Index closes by date.
    Series(BTreeMap<NaiveDate, f64>),
}

impl Benchmark {
    /// Reads a `date,close` file.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, BacktestError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut series = BTreeMap::new();
        for rec in r.deserialize::<(NaiveDate, f64)>() {
            let (date, close) = rec.map_err(|e| BacktestError::Benchmark(e.to_string()))?;
            if !(close > 0.0 && close.is_finite()) {
                return Err(BacktestError::Benchmark(format!(
                    "non-positive close on {date}"
                )));
            }
            series.insert(date, close);
        }
        Ok(Benchmark::Series(series))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub annualized_return: f64,
    pub max_drawdown: f64,
    /// `None` when the excess return has zero spread.
    pub information_ratio: Option<f64>,
    pub periods: usize,
    pub equity_curve: Vec<(NaiveDate, f64)>,
    /// Benchmark compounded from the strategy's starting equity.
    pub benchmark_curve: Vec<(NaiveDate, f64)>,
}

impl BacktestReport {
    /// `metric,value`, with `NaN` for an undefined information ratio.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        w.write_record(["annualized_return", &self.annualized_return.to_string()])?;
        w.write_record(["max_drawdown", &self.max_drawdown.to_string()])?;
        w.write_record([
            "information_ratio",
            &self.information_ratio.unwrap_or(f64::NAN).to_string(),
        ])?;
        w.write_record(["periods", &self.periods.to_string()])?;
        w.flush()?;
        Ok(())
    }

    /// `date,equity,benchmark`.
    pub fn write_curves_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "equity", "benchmark"])?;
        for ((date, eq), (_, bm)) in self.equity_curve.iter().zip(&self.benchmark_curve) {
            w.write_record([date.to_string(), eq.to_string(), bm.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Largest peak-to-trough decline, as a non-positive fraction of the running peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in equity {
        peak = peak.max(v);
        worst = worst.min(v / peak - 1.0);
    }
    worst
}

fn benchmark_returns(
    ledger: &BacktestLedger,
    predictions: &[ReturnVector],
    bars: &BarStore,
    benchmark: &Benchmark,
) -> Result<Vec<f64>, BacktestError> {
    let dates: Vec<NaiveDate> = ledger.entries.iter().map(|e| e.date).collect();
    match benchmark {
        Benchmark::EqualWeightUniverse => {
            let universe: BTreeMap<NaiveDate, &ReturnVector> =
                predictions.iter().map(|p| (p.date, p)).collect();
            dates
                .windows(2)
                .map(|w| {
                    let members = universe
                        .get(&w[0])
                        .map(|p| p.stock_ids.as_slice())
                        .unwrap_or(&[]);
                    let rets: Vec<f64> = members
                        .iter()
                        .filter_map(|id| {
                            Some(bars.bar(id, w[1])?.close / bars.bar(id, w[0])?.close - 1.0)
                        })
                        .collect();
                    if rets.is_empty() {
                        return Err(BacktestError::Benchmark(format!(
                            "no universe returns between {} and {}",
                            w[0], w[1]
                        )));
                    }
                    Ok(rets.iter().sum::<f64>() / rets.len() as f64)
                })
                .collect()
        }
        Benchmark::Series(series) => {
            let close = |d: &NaiveDate| {
                series.get(d).copied().ok_or_else(|| {
                    BacktestError::Benchmark(format!("benchmark has no close on {d}"))
                })
            };
            dates
                .windows(2)
                .map(|w| Ok(close(&w[1])? / close(&w[0])? - 1.0))
                .collect()
        }
    }
}

/// Annualized return, maximum drawdown and information ratio of a finished run.
pub fn compute_report(
    ledger: &BacktestLedger,
    predictions: &[ReturnVector],
    bars: &BarStore,
    benchmark: &Benchmark,
    config: &BacktestConfig,
) -> Result<BacktestReport, BacktestError> {
    let curve = ledger.equity_curve();
    if curve.len() < 2 {
        return Err(BacktestError::InsufficientData(curve.len()));
    }
    let equity: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
    let periods = equity.len() - 1;
    let annual = config.trading_days_per_year as f64;
    let annualized_return = (equity[periods] / equity[0]).powf(annual / periods as f64) - 1.0;

    let strategy: Vec<f64> = ledger.daily_returns().into_iter().map(|(_, r)| r).collect();
    let bench = benchmark_returns(ledger, predictions, bars, benchmark)?;
    let diff: Vec<f64> = strategy.iter().zip(&bench).map(|(s, b)| s - b).collect();
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    let std =
        (diff.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / diff.len() as f64).sqrt();
    let information_ratio = (std > 0.0).then(|| mean / std * annual.sqrt());

    let mut benchmark_curve = Vec::with_capacity(curve.len());
    let mut level = equity[0];
    benchmark_curve.push((curve[0].0, level));
    for ((date, _), r) in curve[1..].iter().zip(&bench) {
        level *= 1.0 + r;
        benchmark_curve.push((*date, level));
    }

    Ok(BacktestReport {
        annualized_return,
        max_drawdown: max_drawdown(&equity),
        information_ratio,
        periods,
        equity_curve: curve,
        benchmark_curve,
    })
}
