//! Raw bar ingestion, the trading universe, Alpha360 feature panels and dataset splits.

mod alpha360;
mod bars;
mod split;
mod universe;

use chrono::NaiveDate;

pub use alpha360::{
    build_alpha360, build_panels, Alpha360Options, FeaturePanel, BLOCK_FIELDS, FEATURE_DIM,
    LOOKBACK_DAYS,
};
pub use bars::{ingest_bars, Bar, BarStore, Ingested, RejectedRow, BAR_COLUMNS};
pub use split::{split_dataset, DateRange, Splits};
pub use universe::Universe;

#[derive(Debug, thiserror::Error)]
pub enum MarketDataError {
    #[error("line {line}: {reason}")]
    InvalidRow { line: usize, reason: String },
    #[error("duplicate bar for {stock_id} on {date} (lines {first_line} and {second_line})")]
    DuplicateBar {
        stock_id: String,
        date: NaiveDate,
        first_line: usize,
        second_line: usize,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("{0} is not a trading day")]
    NotTradingDay(NaiveDate),
    #[error("no stock has 60 consecutive bars ending at {0}")]
    EmptyPanel(NaiveDate),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
