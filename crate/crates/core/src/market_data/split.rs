use chrono::NaiveDate;

use super::{FeaturePanel, MarketDataError};

/// Inclusive date range. A range whose start is after its end is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start <= other.end && other.start <= self.end
    }
}

impl std::fmt::Display for DateRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<FeaturePanel>,
    pub valid: Vec<FeaturePanel>,
    pub test: Vec<FeaturePanel>,
}

/// Assigns each panel to at most one split by date, preserving chronological order.
pub fn split_dataset(
    panels: Vec<FeaturePanel>,
    train: DateRange,
    valid: DateRange,
    test: DateRange,
) -> Result<Splits, MarketDataError> {
    let ranges = [train, valid, test];
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.overlaps(b) {
                return Err(MarketDataError::Config(format!(
                    "ranges {a} and {b} overlap"
                )));
            }
            if !a.is_empty() && !b.is_empty() && a.start > b.start {
                return Err(MarketDataError::Config(format!(
                    "range {a} must precede {b}"
                )));
            }
        }
    }
    let mut panels = panels;
    panels.sort_by_key(|p| p.date);
    let mut out = Splits::default();
    for p in panels {
        if train.contains(p.date) {
            out.train.push(p);
        } else if valid.contains(p.date) {
            out.valid.push(p);
        } else if test.contains(p.date) {
            out.test.push(p);
        }
    }
    Ok(out)
}
