//! Prediction-quality metrics: daily IC and Rank IC, their means, and the
//! information ratios ICIR / Rank ICIR.
//!
//! Standard deviations are population (divide by the number of values). Ranks
//! use the average rank for ties. Days where a correlation is undefined are
//! dropped from both the mean and the ICIR denominator.

use std::io;

use chrono::NaiveDate;
use log::warn;

use crate::model::ReturnVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("correlation needs at least 2 values, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("predictions and labels are misaligned at {0}")]
    Alignment(NaiveDate),
    #[error("need at least 2 usable days, got {0}")]
    InsufficientData(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ic: f64,
    /// `None` when the daily IC series has zero standard deviation.
    pub icir: Option<f64>,
    pub rank_ic: f64,
    pub rank_icir: Option<f64>,
    pub daily_ic: Vec<(NaiveDate, f64)>,
    pub daily_rank_ic: Vec<(NaiveDate, f64)>,
    pub days_used: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(EvalError::TooFew(n));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Cross-sectional Pearson correlation between predicted and realized returns.
pub fn daily_ic(predicted: &[f64], realized: &[f64]) -> Result<f64, EvalError> {
    pearson(predicted, realized)
}

/// Pearson correlation of the average-rank transforms.
pub fn daily_rank_ic(predicted: &[f64], realized: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != realized.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), realized.len()));
    }
    pearson(&average_ranks(predicted), &average_ranks(realized))
}

fn mean_and_ir(series: &[(NaiveDate, f64)]) -> (f64, Option<f64>) {
    let n = series.len() as f64;
    let mean = series.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = series.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, (std > 0.0).then(|| mean / std))
}

/// Aggregates daily correlations. `None` entries are undefined days and are skipped.
pub fn aggregate(
    daily_ic: &[(NaiveDate, Option<f64>)],
    daily_rank_ic: &[(NaiveDate, Option<f64>)],
) -> Result<MetricsReport, EvalError> {
    let keep = |s: &[(NaiveDate, Option<f64>)], what: &str| -> Vec<(NaiveDate, f64)> {
        s.iter()
            .filter_map(|&(d, v)| {
                if v.is_none() {
                    warn!("{what} undefined on {d}; day excluded");
                }
                v.map(|v| (d, v))
            })
            .collect()
    };
    let ic_series = keep(daily_ic, "IC");
    let rank_series = keep(daily_rank_ic, "Rank IC");
    let used = ic_series.len().min(rank_series.len());
    if used < 2 {
        return Err(EvalError::InsufficientData(used));
    }
    let (ic, icir) = mean_and_ir(&ic_series);
    let (rank_ic, rank_icir) = mean_and_ir(&rank_series);
    Ok(MetricsReport {
        ic,
        icir,
        rank_ic,
        rank_icir,
        days_used: ic_series.len(),
        daily_ic: ic_series,
        daily_rank_ic: rank_series,
    })
}

/// Dated correlation values; `None` where undefined.
pub type DailySeries = Vec<(NaiveDate, Option<f64>)>;

/// Daily correlations for date- and stock-aligned sequences.
pub fn daily_series(
    predicted: &[ReturnVector],
    realized: &[ReturnVector],
) -> Result<(DailySeries, DailySeries), EvalError> {
    let mut ic = Vec::with_capacity(predicted.len());
    let mut rank = Vec::with_capacity(predicted.len());
    for (i, p) in predicted.iter().enumerate() {
        let Some(t) = realized.get(i) else {
            return Err(EvalError::Alignment(p.date));
        };
        if p.date != t.date || p.stock_ids != t.stock_ids {
            return Err(EvalError::Alignment(p.date.min(t.date)));
        }
        ic.push((p.date, daily_ic(&p.values, &t.values).ok()));
        rank.push((p.date, daily_rank_ic(&p.values, &t.values).ok()));
    }
    if let Some(extra) = realized.get(predicted.len()) {
        return Err(EvalError::Alignment(extra.date));
    }
    Ok((ic, rank))
}

/// Full report for aligned prediction/label sequences.
pub fn evaluate(
    predicted: &[ReturnVector],
    realized: &[ReturnVector],
) -> Result<MetricsReport, EvalError> {
    let (ic, rank) = daily_series(predicted, realized)?;
    aggregate(&ic, &rank)
}

/// Mean daily IC over the usable days, or `None` if no day is usable.
pub fn mean_ic(
    predicted: &[ReturnVector],
    realized: &[ReturnVector],
) -> Result<Option<f64>, EvalError> {
    let (ic, _) = daily_series(predicted, realized)?;
    let used: Vec<f64> = ic.into_iter().filter_map(|(_, v)| v).collect();
    Ok((!used.is_empty()).then(|| used.iter().sum::<f64>() / used.len() as f64))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

impl MetricsReport {
    /// `metric,value` rows; undefined ratios are written as `NaN`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.rows() {
            w.write_record([k, &v])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("ic", self.ic.to_string()),
            ("icir", fmt_opt(self.icir)),
            ("rank_ic", self.rank_ic.to_string()),
            ("rank_icir", fmt_opt(self.rank_icir)),
            ("days_used", self.days_used.to_string()),
        ]
    }

    /// `date,ic,rank_ic` for plotting.
    pub fn write_daily_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "ic", "rank_ic"])?;
        let ranks: std::collections::BTreeMap<_, _> = self.daily_rank_ic.iter().copied().collect();
        for (d, ic) in &self.daily_ic {
            w.write_record([
                d.to_string(),
                ic.to_string(),
                fmt_opt(ranks.get(d).copied()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(i: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 1, 3).unwrap() + chrono::Days::new(i)
    }

    #[test]
    fn perfect_and_inverse_correlation() {
        let r = [0.3, -0.1, 0.25, 0.0];
        assert_eq!(daily_ic(&r, &r).unwrap(), 1.0);
        assert_eq!(daily_ic(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(daily_rank_ic(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn textbook_pearson() {
        // two-pass: means 0.7/3 and 0.4/3, covariance and variances by hand
        let x = [0.1, 0.4, 0.2];
        let y = [0.0, 0.2, 0.2];
        let mx = 0.7 / 3.0;
        let my = 0.4 / 3.0;
        let cov: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / 3.0;
        let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / 3.0).sqrt();
        let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / 3.0).sqrt();
        let expected = cov / (sx * sy);
        assert!((daily_ic(&x, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.7559289460184544).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert_eq!(
            daily_ic(&[1.0, 1.0], &[0.1, 0.2]),
            Err(EvalError::ZeroVariance)
        );
        assert_eq!(
            daily_rank_ic(&[0.1, 0.2], &[5.0, 5.0]),
            Err(EvalError::ZeroVariance)
        );
        assert_eq!(daily_ic(&[1.0], &[1.0]), Err(EvalError::TooFew(1)));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn monotone_transform_keeps_rank_ic() {
        let r = [0.01, -0.02, 0.03, 0.005];
        let p: Vec<f64> = r.iter().map(|v| (v * 50.0f64).exp()).collect();
        assert_eq!(daily_rank_ic(&p, &r).unwrap(), 1.0);
        let rev: Vec<f64> = r.iter().map(|v| -v).collect();
        assert_eq!(daily_rank_ic(&rev, &r).unwrap(), -1.0);
    }

    #[test]
    fn aggregate_population_std() {
        let ic = [(day(0), Some(0.1)), (day(1), Some(0.3))];
        let report = aggregate(&ic, &ic).unwrap();
        assert!((report.ic - 0.2).abs() < 1e-15);
        assert!((report.icir.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_undefined_icir() {
        let ic = [(day(0), Some(0.2)), (day(1), Some(0.2)), (day(2), None)];
        let report = aggregate(&ic, &ic).unwrap();
        assert_eq!(report.icir, None);
        assert_eq!(report.days_used, 2);
    }

    #[test]
    fn single_usable_day_is_insufficient() {
        let ic = [(day(0), Some(0.2)), (day(1), None)];
        assert_eq!(aggregate(&ic, &ic), Err(EvalError::InsufficientData(1)));
    }

    #[test]
    fn misaligned_dates_name_the_date() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let p = vec![ReturnVector {
            date: day(0),
            stock_ids: ids.clone(),
            values: vec![0.1, 0.2],
        }];
        let t = vec![ReturnVector {
            date: day(1),
            stock_ids: ids,
            values: vec![0.1, 0.2],
        }];
        assert_eq!(evaluate(&p, &t), Err(EvalError::Alignment(day(0))));
    }
}
