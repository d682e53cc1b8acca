use std::io;

use chrono::NaiveDate;
use ndarray::Array2;

use super::{Bar, BarStore, MarketDataError, Universe};

/// Days in the lookback window, current day included.
pub const LOOKBACK_DAYS: usize = 60;
/// Values per day block: open, close, high, low, volume, vwap.
pub const BLOCK_FIELDS: [&str; 6] = ["open", "close", "high", "low", "volume", "vwap"];
pub const FEATURE_DIM: usize = LOOKBACK_DAYS * BLOCK_FIELDS.len();

const VOLUME_FIELD: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alpha360Options {
    /// Divide prices by the current close and volumes by the current volume.
    pub normalize: bool,
    /// Cross-sectionally z-score each feature column of a panel, after `normalize`.
    pub standardize_features: bool,
    /// Cross-sectionally z-score the labels of each panel.
    pub standardize_labels: bool,
}

impl Default for Alpha360Options {
    fn default() -> Self {
        Self {
            normalize: true,
            standardize_features: false,
            standardize_labels: false,
        }
    }
}

/// Per-day cross-section of Alpha360 features with next-day return labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    /// `n × 360`; row `j` holds 60 day blocks, oldest first.
    pub features: Array2<f64>,
    /// One-day forward return per row; `None` when the next close is unavailable.
    pub labels: Vec<Option<f64>>,
}

impl FeaturePanel {
    pub fn len(&self) -> usize {
        self.stock_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stock_ids.is_empty()
    }

    /// Labels as a dense vector when every row is labelled.
    pub fn label_vector(&self) -> Option<Vec<f64>> {
        self.labels.iter().copied().collect()
    }

    pub fn has_any_label(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Writes the `stock_id,f000..f359,label` layout. Missing labels are empty fields.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), MarketDataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["stock_id".to_string()];
        header.extend((0..self.features.ncols()).map(|i| format!("f{i:03}")));
        header.push("label".into());
        w.write_record(&header)?;
        for (j, id) in self.stock_ids.iter().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(id.clone());
            rec.extend(self.features.row(j).iter().map(|v| v.to_string()));
            rec.push(self.labels[j].map(|l| l.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(date: NaiveDate, source: R) -> Result<Self, MarketDataError> {
        let mut reader = csv::Reader::from_reader(source);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("stock_id") || headers.iter().next_back() != Some("label") {
            return Err(MarketDataError::MissingColumn("stock_id/label".into()));
        }
        let width = headers.len() - 2;
        let mut ids = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            ids.push(rec[0].to_string());
            for raw in rec.iter().skip(1).take(width) {
                let v: f64 = raw.parse().map_err(|_| MarketDataError::InvalidRow {
                    line,
                    reason: format!("bad feature {raw:?}"),
                })?;
                values.push(v);
            }
            let raw = &rec[width + 1];
            labels.push(if raw.is_empty() {
                None
            } else {
                Some(raw.parse().map_err(|_| MarketDataError::InvalidRow {
                    line,
                    reason: format!("bad label {raw:?}"),
                })?)
            });
        }
        let features = Array2::from_shape_vec((ids.len(), width), values).map_err(|e| {
            MarketDataError::InvalidRow {
                line: 0,
                reason: e.to_string(),
            }
        })?;
        Ok(Self {
            date,
            stock_ids: ids,
            features,
            labels,
        })
    }
}

/// Builds the feature panel for `date`.
///
/// A stock qualifies when it is in the universe on `date` and has a bar on each of
/// the 60 consecutive calendar days ending at `date`.
pub fn build_alpha360(
    store: &BarStore,
    universe: &Universe,
    date: NaiveDate,
    options: Alpha360Options,
) -> Result<FeaturePanel, MarketDataError> {
    let pos = store
        .calendar_position(date)
        .ok_or(MarketDataError::NotTradingDay(date))?;
    if pos + 1 < LOOKBACK_DAYS {
        return Err(MarketDataError::EmptyPanel(date));
    }
    let window = &store.calendar()[pos + 1 - LOOKBACK_DAYS..=pos];
    let next_day = store.calendar().get(pos + 1).copied();

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let Some(members) = universe.members(date) else {
        return Err(MarketDataError::EmptyPanel(date));
    };
    for id in members {
        let bars: Option<Vec<&Bar>> = window.iter().map(|&d| store.bar(id, d)).collect();
        let Some(bars) = bars else { continue };
        let current = bars[LOOKBACK_DAYS - 1];
        let (price_scale, volume_scale) = if options.normalize {
            (
                current.close,
                if current.volume == 0.0 {
                    1.0
                } else {
                    current.volume
                },
            )
        } else {
            (1.0, 1.0)
        };
        for b in &bars {
            let block = [b.open, b.close, b.high, b.low, b.volume, b.vwap];
            for (field, v) in block.into_iter().enumerate() {
                values.push(if field == VOLUME_FIELD {
                    v / volume_scale
                } else {
                    v / price_scale
                });
            }
        }
        labels.push(
            next_day
                .and_then(|nd| store.bar(id, nd))
                .map(|next| (next.close - current.close) / current.close),
        );
        ids.push(id.clone());
    }
    if ids.is_empty() {
        return Err(MarketDataError::EmptyPanel(date));
    }
    if options.standardize_labels {
        standardize(&mut labels);
    }
    let mut features =
        Array2::from_shape_vec((ids.len(), FEATURE_DIM), values).expect("row width is FEATURE_DIM");
    if options.standardize_features {
        for mut col in features.columns_mut() {
            let mean = col.mean().unwrap_or(0.0);
            let std = col
                .mapv(|v| (v - mean).powi(2))
                .mean()
                .unwrap_or(0.0)
                .sqrt();
            col.mapv_inplace(|v| if std > 0.0 { (v - mean) / std } else { 0.0 });
        }
    }
    Ok(FeaturePanel {
        date,
        stock_ids: ids,
        features,
        labels,
    })
}

/// Panels for every calendar date with at least one qualifying stock.
pub fn build_panels(
    store: &BarStore,
    universe: &Universe,
    options: Alpha360Options,
) -> Vec<FeaturePanel> {
    store
        .calendar()
        .iter()
        .filter_map(|&d| build_alpha360(store, universe, d, options).ok())
        .collect()
}

fn standardize(labels: &mut [Option<f64>]) {
    let present: Vec<f64> = labels.iter().flatten().copied().collect();
    if present.len() < 2 {
        return;
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let var = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / present.len() as f64;
    let std = var.sqrt();
    for l in labels.iter_mut().flatten() {
        *l = if std > 0.0 { (*l - mean) / std } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    fn bar(id: &str, i: usize, close: f64, volume: f64) -> Bar {
        Bar {
            stock_id: id.into(),
            date: date(i),
            open: close,
            high: close,
            low: close,
            close,
            vwap: close,
            volume,
        }
    }

    #[test]
    fn constant_series_normalizes_to_ones() {
        let store = BarStore::from_bars((0..60).map(|i| bar("A", i, 12.5, 300.0))).unwrap();
        let universe = Universe::from_bars(&store);
        let panel =
            build_alpha360(&store, &universe, date(59), Alpha360Options::default()).unwrap();
        assert_eq!(panel.features.dim(), (1, FEATURE_DIM));
        assert!(panel.features.iter().all(|&v| v == 1.0));
        assert_eq!(panel.labels, vec![None]);
    }

    #[test]
    fn zero_current_volume_falls_back_to_one() {
        let mut bars: Vec<_> = (0..60).map(|i| bar("A", i, 10.0, 50.0)).collect();
        bars[59].volume = 0.0;
        let store = BarStore::from_bars(bars).unwrap();
        let panel = build_alpha360(
            &store,
            &Universe::from_bars(&store),
            date(59),
            Alpha360Options::default(),
        )
        .unwrap();
        assert_eq!(panel.features[[0, VOLUME_FIELD]], 50.0);
        assert_eq!(panel.features[[0, FEATURE_DIM - 2]], 0.0);
    }

    #[test]
    fn insufficient_history_is_excluded() {
        let mut bars: Vec<_> = (0..60).map(|i| bar("A", i, 10.0, 1.0)).collect();
        bars.extend((1..60).map(|i| bar("B", i, 10.0, 1.0)));
        let store = BarStore::from_bars(bars).unwrap();
        let panel = build_alpha360(
            &store,
            &Universe::from_bars(&store),
            date(59),
            Alpha360Options::default(),
        )
        .unwrap();
        assert_eq!(panel.stock_ids, ["A"]);
    }

    #[test]
    fn gap_disqualifies_row() {
        let mut bars: Vec<_> = (0..61).map(|i| bar("A", i, 10.0, 1.0)).collect();
        bars.extend((0..61).filter(|&i| i != 30).map(|i| bar("B", i, 10.0, 1.0)));
        let store = BarStore::from_bars(bars).unwrap();
        let panel = build_alpha360(
            &store,
            &Universe::from_bars(&store),
            date(60),
            Alpha360Options::default(),
        )
        .unwrap();
        assert_eq!(panel.stock_ids, ["A"]);
    }

    #[test]
    fn label_is_next_close_return() {
        let mut bars: Vec<_> = (0..60).map(|i| bar("A", i, 100.0, 1.0)).collect();
        bars.push(bar("A", 60, 105.0, 1.0));
        let store = BarStore::from_bars(bars).unwrap();
        let panel = build_alpha360(
            &store,
            &Universe::from_bars(&store),
            date(59),
            Alpha360Options::default(),
        )
        .unwrap();
        assert!((panel.labels[0].unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn no_qualifying_stock_is_empty_panel() {
        let store = BarStore::from_bars((0..10).map(|i| bar("A", i, 1.0, 1.0))).unwrap();
        assert!(matches!(
            build_alpha360(
                &store,
                &Universe::from_bars(&store),
                date(9),
                Alpha360Options::default()
            ),
            Err(MarketDataError::EmptyPanel(_))
        ));
        assert!(matches!(
            build_alpha360(
                &store,
                &Universe::from_bars(&store),
                date(100),
                Alpha360Options::default()
            ),
            Err(MarketDataError::NotTradingDay(_))
        ));
    }

    #[test]
    fn universe_excludes_non_members() {
        let mut bars: Vec<_> = (0..60).map(|i| bar("A", i, 10.0, 1.0)).collect();
        bars.extend((0..60).map(|i| bar("B", i, 10.0, 1.0)));
        let store = BarStore::from_bars(bars).unwrap();
        let universe = Universe::from_pairs([(date(59), "B".to_string())]);
        let panel =
            build_alpha360(&store, &universe, date(59), Alpha360Options::default()).unwrap();
        assert_eq!(panel.stock_ids, ["B"]);
    }

    #[test]
    fn standardized_labels_have_zero_mean() {
        let mut bars = Vec::new();
        for (k, id) in ["A", "B", "C"].iter().enumerate() {
            bars.extend((0..60).map(|i| bar(id, i, 10.0, 1.0)));
            bars.push(bar(id, 60, 10.0 + k as f64, 1.0));
        }
        let store = BarStore::from_bars(bars).unwrap();
        let opts = Alpha360Options {
            normalize: true,
            standardize_features: false,
            standardize_labels: true,
        };
        let panel = build_alpha360(&store, &Universe::from_bars(&store), date(59), opts).unwrap();
        let l = panel.label_vector().unwrap();
        assert!(l.iter().sum::<f64>().abs() < 1e-12);
        assert!((l[2] - 1.224744871391589).abs() < 1e-12);
    }
}
