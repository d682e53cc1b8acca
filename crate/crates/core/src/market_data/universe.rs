use std::collections::{BTreeMap, BTreeSet};
use std::io;

use chrono::NaiveDate;

use super::{BarStore, MarketDataError};

/// Tradable stocks per date. Members are kept in lexicographic order, which
/// keeps row alignment stable for stocks present on consecutive dates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Universe {
    membership: BTreeMap<NaiveDate, BTreeSet<String>>,
}

impl Universe {
    /// Every stock with a bar on a date is a member on that date.
    pub fn from_bars(store: &BarStore) -> Self {
        let mut membership: BTreeMap<NaiveDate, BTreeSet<String>> = BTreeMap::new();
        for bar in store.iter() {
            membership
                .entry(bar.date)
                .or_default()
                .insert(bar.stock_id.clone());
        }
        Self { membership }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (NaiveDate, String)>) -> Self {
        let mut membership: BTreeMap<NaiveDate, BTreeSet<String>> = BTreeMap::new();
        for (date, id) in pairs {
            membership.entry(date).or_default().insert(id);
        }
        Self { membership }
    }

    /// Reads a `date,stock_id` CSV.
    pub fn read_csv<R: io::Read>(source: R) -> Result<Self, MarketDataError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = reader.headers()?.clone();
        let date_col = headers
            .iter()
            .position(|h| h == "date")
            .ok_or_else(|| MarketDataError::MissingColumn("date".into()))?;
        let id_col = headers
            .iter()
            .position(|h| h == "stock_id")
            .ok_or_else(|| MarketDataError::MissingColumn("stock_id".into()))?;
        let mut pairs = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let raw = rec.get(date_col).unwrap_or_default();
            let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| {
                MarketDataError::InvalidRow {
                    line,
                    reason: format!("bad date {raw:?}"),
                }
            })?;
            let id = rec.get(id_col).unwrap_or_default();
            if id.is_empty() {
                return Err(MarketDataError::InvalidRow {
                    line,
                    reason: "empty stock_id".into(),
                });
            }
            pairs.push((date, id.to_string()));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), MarketDataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "stock_id"])?;
        for (date, ids) in &self.membership {
            let d = date.format("%Y-%m-%d").to_string();
            for id in ids {
                w.write_record([d.as_str(), id.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn members(&self, date: NaiveDate) -> Option<&BTreeSet<String>> {
        self.membership.get(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.membership.keys().copied()
    }
}
