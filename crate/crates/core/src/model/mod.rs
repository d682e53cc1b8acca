//! The topic/expectation return model: parameters, equations, the day-step
//! forward pass and checkpoints.

mod checkpoint;
mod forward;
pub(crate) mod graph;
mod ops;
mod params;

use std::io;

use chrono::NaiveDate;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub(crate) use forward::{forward_day, Dropout, StateVars};
pub use forward::{DayState, Model, ModelOptions, Variant};
pub use ops::{
    advance_expectation, assign_topics, encode_temporal, expectation_attention, loss,
    predict_returns, tanimoto, update_topics, valid_topics, HeadPrediction, RecurrentState,
};
pub use params::{ModelParameters, Param};

pub use crate::autodiff::DegenerateSimilarity;

pub const DEFAULT_EMBEDDING_SIZE: usize = 128;

/// Dated per-stock returns, either predicted or realized.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnVector {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    pub values: Vec<f64>,
}

/// Writes `date,stock_id,<value_column>` rows, one per stock-day.
pub fn write_return_series<W: io::Write>(
    writer: W,
    value_column: &str,
    series: &[ReturnVector],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "stock_id", value_column])?;
    for rv in series {
        let date = rv.date.to_string();
        for (id, v) in rv.stock_ids.iter().zip(&rv.values) {
            w.write_record([date.as_str(), id.as_str(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_return_series`]. Rows of one date must be
/// contiguous and dates increasing.
pub fn read_return_series<R: io::Read>(reader: R) -> csv::Result<Vec<ReturnVector>> {
    let invalid = |msg: String| csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, msg));
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<ReturnVector> = Vec::new();
    for row in r.deserialize::<(NaiveDate, String, f64)>() {
        let (date, id, value) = row?;
        match out.last_mut() {
            Some(last) if last.date == date => {
                last.stock_ids.push(id);
                last.values.push(value);
            }
            Some(last) if last.date > date => {
                return Err(invalid(format!("date {date} follows {}", last.date)));
            }
            _ => out.push(ReturnVector {
                date,
                stock_ids: vec![id],
                values: vec![value],
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Degenerate(#[from] DegenerateSimilarity),
    #[error("topic assignment needs at least 2 stocks, got {0}")]
    TooFewStocks(usize),
    #[error("non-finite feature in row {row}")]
    NonFiniteInput { row: usize },
    #[error("sequences are misaligned at {0}")]
    Alignment(NaiveDate),
    #[error("shape error: {0}")]
    Shape(String),
}
