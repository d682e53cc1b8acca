use std::collections::{BTreeMap, BTreeSet};
use std::io;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::MarketDataError;

pub const BAR_COLUMNS: [&str; 8] = [
    "stock_id", "date", "open", "high", "low", "close", "vwap", "volume",
];

/// One stock-day of raw market data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub stock_id: String,
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub vwap: f64,
    pub volume: f64,
}

impl Bar {
    /// Checks the price/volume invariants, returning a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("vwap", self.vwap),
        ];
        for (name, p) in prices {
            if !p.is_finite() || p <= 0.0 {
                return Err(format!("{name} must be a positive finite price, got {p}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!(
                "volume must be finite and non-negative, got {}",
                self.volume
            ));
        }
        if self.high < self.low {
            return Err(format!("high {} is below low {}", self.high, self.low));
        }
        for (name, p) in [
            ("open", self.open),
            ("close", self.close),
            ("vwap", self.vwap),
        ] {
            if p < self.low || p > self.high {
                return Err(format!(
                    "{name} {p} outside [low {}, high {}]",
                    self.low, self.high
                ));
            }
        }
        Ok(())
    }
}

/// A rejected input row, with its 1-based line number in the source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

/// Immutable, validated bars keyed by stock then date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarStore {
    by_stock: BTreeMap<String, BTreeMap<NaiveDate, Bar>>,
    calendar: Vec<NaiveDate>,
}

impl BarStore {
    /// Builds a store from already-validated bars. Duplicate `(stock_id, date)` keys are a conflict.
    pub fn from_bars(bars: impl IntoIterator<Item = Bar>) -> Result<Self, MarketDataError> {
        let mut by_stock: BTreeMap<String, BTreeMap<NaiveDate, Bar>> = BTreeMap::new();
        for bar in bars {
            bar.validate()
                .map_err(|reason| MarketDataError::InvalidRow { line: 0, reason })?;
            let entry = by_stock.entry(bar.stock_id.clone()).or_default();
            if entry.contains_key(&bar.date) {
                return Err(MarketDataError::DuplicateBar {
                    stock_id: bar.stock_id,
                    date: bar.date,
                    first_line: 0,
                    second_line: 0,
                });
            }
            entry.insert(bar.date, bar);
        }
        Ok(Self::assemble(by_stock))
    }

    fn assemble(by_stock: BTreeMap<String, BTreeMap<NaiveDate, Bar>>) -> Self {
        let calendar: BTreeSet<NaiveDate> =
            by_stock.values().flat_map(|m| m.keys().copied()).collect();
        Self {
            by_stock,
            calendar: calendar.into_iter().collect(),
        }
    }

    /// Sorted union of all dates on which any stock traded.
    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn calendar_position(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    pub fn stock_ids(&self) -> impl Iterator<Item = &str> {
        self.by_stock.keys().map(String::as_str)
    }

    pub fn bar(&self, stock_id: &str, date: NaiveDate) -> Option<&Bar> {
        self.by_stock.get(stock_id)?.get(&date)
    }

    pub fn stock_bars(&self, stock_id: &str) -> Option<impl Iterator<Item = &Bar>> {
        self.by_stock.get(stock_id).map(|m| m.values())
    }

    /// Last close at or before `date`.
    pub fn last_close(&self, stock_id: &str, date: NaiveDate) -> Option<f64> {
        self.by_stock
            .get(stock_id)?
            .range(..=date)
            .next_back()
            .map(|(_, b)| b.close)
    }

    /// All bars sorted by `(stock_id, date)`.
    pub fn iter(&self) -> impl Iterator<Item = &Bar> {
        self.by_stock.values().flat_map(|m| m.values())
    }

    pub fn len(&self) -> usize {
        self.by_stock.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_stock.is_empty()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), MarketDataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(BAR_COLUMNS)?;
        for b in self.iter() {
            w.write_record([
                b.stock_id.clone(),
                b.date.format("%Y-%m-%d").to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.vwap.to_string(),
                b.volume.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of [`ingest_bars`]: the store plus any rows that were skipped.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub store: BarStore,
    pub rejected: Vec<RejectedRow>,
}

/// Parses and validates a bar CSV.
///
/// With `skip_bad_rows == false` the first malformed or invariant-violating row
/// aborts ingestion; otherwise such rows are collected in [`Ingested::rejected`].
/// Duplicate `(stock_id, date)` pairs are always a hard conflict.
pub fn ingest_bars<R: io::Read>(
    source: R,
    skip_bad_rows: bool,
) -> Result<Ingested, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut column = [0usize; 8];
    for (slot, name) in column.iter_mut().zip(BAR_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MarketDataError::MissingColumn(name.to_string()))?;
    }

    let mut by_stock: BTreeMap<String, BTreeMap<NaiveDate, (Bar, usize)>> = BTreeMap::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header occupies line 1
        let line = i + 2;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|rec| parse_bar(&rec, &column))
            .and_then(|bar| bar.validate().map(|_| bar));
        let bar = match parsed {
            Ok(bar) => bar,
            Err(reason) if skip_bad_rows => {
                rejected.push(RejectedRow { line, reason });
                continue;
            }
            Err(reason) => return Err(MarketDataError::InvalidRow { line, reason }),
        };
        let entry = by_stock.entry(bar.stock_id.clone()).or_default();
        if let Some((_, first_line)) = entry.get(&bar.date) {
            return Err(MarketDataError::DuplicateBar {
                stock_id: bar.stock_id,
                date: bar.date,
                first_line: *first_line,
                second_line: line,
            });
        }
        entry.insert(bar.date, (bar, line));
    }

    let by_stock = by_stock
        .into_iter()
        .map(|(k, m)| (k, m.into_iter().map(|(d, (b, _))| (d, b)).collect()))
        .collect();
    Ok(Ingested {
        store: BarStore::assemble(by_stock),
        rejected,
    })
}

fn parse_bar(rec: &csv::StringRecord, column: &[usize; 8]) -> Result<Bar, String> {
    let field = |i: usize| {
        rec.get(column[i])
            .ok_or_else(|| format!("missing field {}", BAR_COLUMNS[i]))
    };
    let num = |i: usize| -> Result<f64, String> {
        let raw = field(i)?;
        raw.parse::<f64>()
            .map_err(|_| format!("{} is not a number: {raw:?}", BAR_COLUMNS[i]))
    };
    let stock_id = field(0)?.to_string();
    if stock_id.is_empty() {
        return Err("empty stock_id".into());
    }
    let raw_date = field(1)?;
    let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
        .map_err(|_| format!("bad date {raw_date:?}"))?;
    Ok(Bar {
        stock_id,
        date,
        open: num(2)?,
        high: num(3)?,
        low: num(4)?,
        close: num(5)?,
        vwap: num(6)?,
        volume: num(7)?,
    })
}
