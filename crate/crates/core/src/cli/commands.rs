use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};

use super::artifacts::{read_verified, ManifestDraft, OutputDir};
use super::{
    BacktestArgs, Cli, CliError, ConfigFile, EvaluateArgs, IngestArgs, PredictArgs, ReportArgs,
    SynthArgs, TrainArgs,
};
use crate::backtest::{compute_report, run_topk_dropout, BacktestConfig, Benchmark};
use crate::evaluation;
use crate::market_data::{
    build_panels, ingest_bars, split_dataset, BarStore, DateRange, FeaturePanel, Universe,
};
use crate::model::{read_return_series, write_return_series, Checkpoint, ReturnVector};
use crate::synth::{generate, SynthSpec};
use crate::training::{
    fit, init_params, predict as predict_panels, realized_returns, TrainingConfig,
};

const BARS_FILE: &str = "bars.csv";
const UNIVERSE_FILE: &str = "universe.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";
const CONFIG_FILE: &str = "config.txt";

fn csv_out(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn load_store(dir: &Path, draft: &mut ManifestDraft) -> Result<(BarStore, Universe), CliError> {
    let bars_path = dir.join(BARS_FILE);
    let (bytes, digest) = read_verified(&bars_path)?;
    draft.input(&bars_path, digest);
    let store = ingest_bars(bytes.as_slice(), false)?.store;
    let uni_path = dir.join(UNIVERSE_FILE);
    let universe = if uni_path.exists() {
        let (bytes, digest) = read_verified(&uni_path)?;
        draft.input(&uni_path, digest);
        Universe::read_csv(bytes.as_slice())?
    } else {
        Universe::from_bars(&store)
    };
    Ok((store, universe))
}

fn load_series(path: &Path, draft: &mut ManifestDraft) -> Result<Vec<ReturnVector>, CliError> {
    let (bytes, digest) = read_verified(path)?;
    draft.input(path, digest);
    Ok(read_return_series(bytes.as_slice())?)
}

pub fn ingest(cli: &Cli, args: &IngestArgs) -> Result<(), CliError> {
    let mut draft = ManifestDraft::new("ingest");
    let (bytes, digest) = read_verified(&args.bars)?;
    draft.input(&args.bars, digest);
    let ingested = ingest_bars(bytes.as_slice(), args.skip_bad_rows)?;
    if ingested.store.is_empty() {
        return Err(CliError::Data("no valid bars".into()));
    }
    let universe = match &args.universe {
        Some(path) => {
            let (bytes, digest) = read_verified(path)?;
            draft.input(path, digest);
            Universe::read_csv(bytes.as_slice())?
        }
        None => Universe::from_bars(&ingested.store),
    };
    for row in &ingested.rejected {
        warn!("skipped line {}: {}", row.line, row.reason);
    }
    draft.rejected_rows = ingested.rejected;
    draft
        .config
        .insert("skip_bad_rows".into(), args.skip_bad_rows.to_string());

    let mut out = OutputDir::acquire(&cli.out)?;
    out.write_with(BARS_FILE, |buf| Ok(ingested.store.write_csv(buf)?))?;
    out.write_with(UNIVERSE_FILE, |buf| Ok(universe.write_csv(buf)?))?;
    out.finish(draft)?;
    info!(
        "ingested {} bars into {}",
        ingested.store.len(),
        cli.out.display()
    );
    Ok(())
}

pub fn synth(cli: &Cli, config: &ConfigFile, args: &SynthArgs) -> Result<(), CliError> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        stocks: args.stocks.or(config.get("stocks")?).unwrap_or(d.stocks),
        days: args.days.or(config.get("days")?).unwrap_or(d.days),
        seed: cli.seed.or(config.get("seed")?).unwrap_or(d.seed),
        signal: args.signal.or(config.get("signal")?).unwrap_or(d.signal),
        noise: args.noise.or(config.get("noise")?).unwrap_or(d.noise),
        sectors: args.sectors.or(config.get("sectors")?).unwrap_or(d.sectors),
        sector_volatility: args
            .sector_volatility
            .or(config.get("sector_volatility")?)
            .unwrap_or(d.sector_volatility),
        sector_signal: args
            .sector_signal
            .or(config.get("sector_signal")?)
            .unwrap_or(d.sector_signal),
        market_volatility: args
            .market_volatility
            .or(config.get("market_volatility")?)
            .unwrap_or(d.market_volatility),
        start: args.start.unwrap_or(d.start),
    };
    let store = generate(&spec)?;
    let mut draft = ManifestDraft::new("synth");
    draft.seed = Some(spec.seed);
    for (k, v) in [
        ("stocks", spec.stocks.to_string()),
        ("days", spec.days.to_string()),
        ("signal", spec.signal.to_string()),
        ("noise", spec.noise.to_string()),
        ("sectors", spec.sectors.to_string()),
        ("sector_volatility", spec.sector_volatility.to_string()),
        ("sector_signal", spec.sector_signal.to_string()),
        ("market_volatility", spec.market_volatility.to_string()),
        ("start", spec.start.to_string()),
    ] {
        draft.config.insert(k.into(), v);
    }
    let mut out = OutputDir::acquire(&cli.out)?;
    out.write_with(BARS_FILE, |buf| Ok(store.write_csv(buf)?))?;
    out.finish(draft)?;
    Ok(())
}

/// Defaults, then the config file, then flags, then `--seed`.
fn training_config(
    cli: &Cli,
    config: &ConfigFile,
    args: &TrainArgs,
) -> Result<TrainingConfig, CliError> {
    let mut cfg = TrainingConfig::default();
    for (k, v) in &config.values {
        if crate::training::CONFIG_KEYS.contains(&k.as_str()) {
            cfg.set(k, v)?;
        }
    }
    let flags: [(&str, Option<String>); 6] = [
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("embedding_size", args.embedding_size.map(|v| v.to_string())),
        ("dropout", args.dropout.map(|v| v.to_string())),
        ("bptt_window", args.bptt_window.map(|v| v.to_string())),
        ("variant", args.variant.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_map(cfg: &TrainingConfig) -> BTreeMap<String, String> {
    crate::training::CONFIG_KEYS
        .iter()
        .map(|k| (k.to_string(), cfg.get(k)))
        .collect()
}

fn range(
    start: Option<chrono::NaiveDate>,
    end: Option<chrono::NaiveDate>,
    what: &str,
) -> Result<DateRange, CliError> {
    match (start, end) {
        (Some(s), Some(e)) => Ok(DateRange::new(s, e)),
        (None, None) => Ok(DateRange::new(
            chrono::NaiveDate::MAX,
            chrono::NaiveDate::MIN,
        )),
        _ => Err(CliError::Usage(format!(
            "{what} range needs both a start and an end"
        ))),
    }
}

pub fn train(cli: &Cli, config: &ConfigFile, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = training_config(cli, config, args)?;
    let mut draft = ManifestDraft::new("train");
    draft.seed = Some(cfg.seed);
    draft.config = config_map(&cfg);
    let (store, universe) = load_store(&args.store, &mut draft)?;
    let panels: Vec<FeaturePanel> = build_panels(&store, &universe, cfg.alpha360_options())
        .into_iter()
        .filter(FeaturePanel::has_any_label)
        .collect();
    if panels.is_empty() {
        return Err(CliError::Data(
            "no labelled feature panels; need at least 61 trading days".into(),
        ));
    }
    let (train, valid) = if args.train_start.is_none() && args.train_end.is_none() {
        let cut = (panels.len() * 7).div_ceil(10);
        let (t, v) = panels.split_at(cut);
        (t.to_vec(), v.to_vec())
    } else {
        let splits = split_dataset(
            panels,
            range(args.train_start, args.train_end, "training")?,
            range(args.valid_start, args.valid_end, "validation")?,
            DateRange::new(chrono::NaiveDate::MAX, chrono::NaiveDate::MIN),
        )?;
        (splits.train, splits.valid)
    };
    if train.is_empty() {
        return Err(CliError::Data(
            "training range contains no labelled panels".into(),
        ));
    }
    draft
        .config
        .insert("train_days".into(), train.len().to_string());
    draft
        .config
        .insert("valid_days".into(), valid.len().to_string());
    let mut out = OutputDir::acquire(&cli.out)?;
    let outcome = fit(init_params(&cfg), &train, &valid, &cfg, None)?;
    let stocks = train.iter().map(FeaturePanel::len).max().unwrap_or(0);
    out.write(
        CHECKPOINT_FILE,
        &Checkpoint::new(outcome.best, stocks).to_bytes(),
    )?;
    out.write(CONFIG_FILE, cfg.to_config_string().as_bytes())?;
    out.write_with("training.csv", |buf| {
        outcome.record.write_csv(buf).map_err(csv_out)
    })?;
    draft
        .config
        .insert("best_epoch".into(), outcome.record.best_epoch.to_string());
    out.finish(draft)?;
    Ok(())
}

pub fn predict(cli: &Cli, args: &PredictArgs) -> Result<(), CliError> {
    let mut draft = ManifestDraft::new("predict");
    let ckpt_path = args.model.join(CHECKPOINT_FILE);
    if !ckpt_path.exists() {
        return Err(CliError::Usage(format!(
            "missing checkpoint {}",
            ckpt_path.display()
        )));
    }
    let (ckpt_bytes, digest) = read_verified(&ckpt_path)?;
    draft.input(&ckpt_path, digest);
    let cfg_path = args.model.join(CONFIG_FILE);
    let (cfg_bytes, digest) = read_verified(&cfg_path)?;
    draft.input(&cfg_path, digest);
    let cfg = TrainingConfig::parse_str(&String::from_utf8_lossy(&cfg_bytes))?;
    let checkpoint = Checkpoint::read_from(ckpt_bytes.as_slice())?;
    draft.seed = Some(checkpoint.params.seed);
    draft.config = config_map(&cfg);

    let (store, universe) = load_store(&args.store, &mut draft)?;
    let mut options = cfg.alpha360_options();
    options.standardize_labels = false;
    let panels = build_panels(&store, &universe, options);
    let start = args.start.unwrap_or(chrono::NaiveDate::MIN);
    let end = args.end.unwrap_or(chrono::NaiveDate::MAX);
    let split = panels
        .iter()
        .position(|p| p.date >= start)
        .unwrap_or(panels.len());
    let (warmup, rest) = panels.split_at(split);
    let targets: Vec<FeaturePanel> = rest.iter().filter(|p| p.date <= end).cloned().collect();
    if targets.is_empty() {
        return Err(CliError::Data(format!(
            "no feature panels between {start} and {end}"
        )));
    }
    let predictions = predict_panels(&checkpoint.params, cfg.model_options(), &targets, warmup)?;
    let labels = realized_returns(&targets);

    let mut out = OutputDir::acquire(&cli.out)?;
    out.write_with("predictions.csv", |buf| {
        write_return_series(buf, "prediction", &predictions).map_err(csv_out)
    })?;
    out.write_with("labels.csv", |buf| {
        write_return_series(buf, "label", &labels).map_err(csv_out)
    })?;
    out.finish(draft)?;
    Ok(())
}

/// Pairs predictions with labels date by date. Prediction dates without any label
/// (such as the final day) are skipped; a label date or stock without a prediction
/// is an alignment error.
pub fn align(
    predictions: &[ReturnVector],
    labels: &[ReturnVector],
) -> Result<(Vec<ReturnVector>, Vec<ReturnVector>), CliError> {
    let by_date: BTreeMap<_, _> = predictions.iter().map(|p| (p.date, p)).collect();
    let label_dates: std::collections::BTreeSet<_> = labels.iter().map(|l| l.date).collect();
    for p in predictions {
        if !label_dates.contains(&p.date) {
            warn!("no labels on {}; day skipped", p.date);
        }
    }
    let mut preds = Vec::with_capacity(labels.len());
    let mut truth = Vec::with_capacity(labels.len());
    for l in labels {
        let p = by_date
            .get(&l.date)
            .ok_or(evaluation::EvalError::Alignment(l.date))?;
        let scores: BTreeMap<&str, f64> = p
            .stock_ids
            .iter()
            .map(String::as_str)
            .zip(p.values.iter().copied())
            .collect();
        let values = l
            .stock_ids
            .iter()
            .map(|id| {
                scores
                    .get(id.as_str())
                    .copied()
                    .ok_or(evaluation::EvalError::Alignment(l.date))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        preds.push(ReturnVector {
            date: l.date,
            stock_ids: l.stock_ids.clone(),
            values,
        });
        truth.push(l.clone());
    }
    Ok((preds, truth))
}

pub fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), CliError> {
    let mut draft = ManifestDraft::new("evaluate");
    let predictions = load_series(&args.predictions, &mut draft)?;
    let labels = load_series(&args.labels, &mut draft)?;
    let (preds, truth) = align(&predictions, &labels)?;
    let report = evaluation::evaluate(&preds, &truth)?;
    let mut out = OutputDir::acquire(&cli.out)?;
    out.write_with("metrics.csv", |buf| report.write_csv(buf).map_err(csv_out))?;
    out.write_with("daily_ic.csv", |buf| {
        report.write_daily_csv(buf).map_err(csv_out)
    })?;
    out.finish(draft)?;
    info!(
        "IC {:.4}, Rank IC {:.4} over {} days",
        report.ic, report.rank_ic, report.days_used
    );
    Ok(())
}

pub fn backtest(cli: &Cli, config: &ConfigFile, args: &BacktestArgs) -> Result<(), CliError> {
    let d = BacktestConfig::default();
    let cfg = BacktestConfig {
        k: args.k.or(config.get("k")?).unwrap_or(d.k),
        d: args.d.or(config.get("d")?).unwrap_or(d.d),
        transaction_cost_rate: args
            .transaction_cost_rate
            .or(config.get("transaction_cost_rate")?)
            .unwrap_or(d.transaction_cost_rate),
        initial_cash: args
            .initial_cash
            .or(config.get("initial_cash")?)
            .unwrap_or(d.initial_cash),
        trading_days_per_year: config
            .get("trading_days_per_year")?
            .unwrap_or(d.trading_days_per_year),
    };
    cfg.validate()?;
    let mut draft = ManifestDraft::new("backtest");
    for (k, v) in [
        ("k", cfg.k.to_string()),
        ("d", cfg.d.to_string()),
        (
            "transaction_cost_rate",
            cfg.transaction_cost_rate.to_string(),
        ),
        ("initial_cash", cfg.initial_cash.to_string()),
        (
            "trading_days_per_year",
            cfg.trading_days_per_year.to_string(),
        ),
    ] {
        draft.config.insert(k.into(), v);
    }
    let predictions = load_series(&args.predictions, &mut draft)?;
    let (store, _) = load_store(&args.store, &mut draft)?;
    let benchmark = match &args.benchmark {
        Some(path) => {
            let (bytes, digest) = read_verified(path)?;
            draft.input(path, digest);
            Benchmark::read_csv(bytes.as_slice())?
        }
        None => Benchmark::EqualWeightUniverse,
    };
    draft.config.insert(
        "benchmark".into(),
        if args.benchmark.is_some() {
            "series".into()
        } else {
            "equal_weight_universe".into()
        },
    );
    let ledger = run_topk_dropout(&predictions, &store, &cfg)?;
    let report = compute_report(&ledger, &predictions, &store, &benchmark, &cfg)?;
    draft.warnings = ledger.warnings.clone();

    let mut out = OutputDir::acquire(&cli.out)?;
    out.write_with("ledger.csv", |buf| ledger.write_csv(buf).map_err(csv_out))?;
    out.write_with("backtest_report.csv", |buf| {
        report.write_csv(buf).map_err(csv_out)
    })?;
    out.write_with("curves.csv", |buf| {
        report.write_curves_csv(buf).map_err(csv_out)
    })?;
    out.finish(draft)?;
    Ok(())
}

fn read_table(path: &Path, draft: &mut ManifestDraft) -> Result<Vec<Vec<String>>, CliError> {
    let (bytes, digest) = read_verified(path)?;
    draft.input(path, digest);
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.records()
        .map(|rec| {
            rec.map(|r| r.iter().map(str::to_string).collect())
                .map_err(CliError::from)
        })
        .collect()
}

pub fn report(cli: &Cli, args: &ReportArgs) -> Result<(), CliError> {
    let mut draft = ManifestDraft::new("report");
    let metrics = read_table(&args.evaluation.join("metrics.csv"), &mut draft)?;
    let daily = read_table(&args.evaluation.join("daily_ic.csv"), &mut draft)?;
    let bt = read_table(&args.backtest.join("backtest_report.csv"), &mut draft)?;
    let curves = read_table(&args.backtest.join("curves.csv"), &mut draft)?;

    let mut merged = csv::Writer::from_writer(Vec::new());
    merged.write_record(["section", "metric", "value"])?;
    for (section, rows) in [("evaluation", &metrics), ("backtest", &bt)] {
        for row in rows {
            if row.len() < 2 {
                return Err(CliError::Data(format!("malformed {section} row {row:?}")));
            }
            merged.write_record([section, &row[0], &row[1]])?;
        }
    }
    let merged = merged
        .into_inner()
        .map_err(|e| CliError::Data(e.to_string()))?;

    let mut series: BTreeMap<String, [String; 4]> = BTreeMap::new();
    for row in &daily {
        let entry = series.entry(row[0].clone()).or_default();
        entry[0] = row.get(1).cloned().unwrap_or_default();
        entry[1] = row.get(2).cloned().unwrap_or_default();
    }
    for row in &curves {
        let entry = series.entry(row[0].clone()).or_default();
        entry[2] = row.get(1).cloned().unwrap_or_default();
        entry[3] = row.get(2).cloned().unwrap_or_default();
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "ic", "rank_ic", "equity", "benchmark"])?;
    for (date, [a, b, c, d]) in &series {
        w.write_record([date, a, b, c, d])?;
    }
    let series_bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;

    let mut out = OutputDir::acquire(&cli.out)?;
    out.write("report.csv", &merged)?;
    out.write("series.csv", &series_bytes)?;
    out.finish(draft)?;
    Ok(())
}
