//! Day-recursive training with truncated backpropagation, model selection on
//! validation IC, and stateful prediction.

mod adam;
mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use log::{info, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{clip_global_norm, Adam};
pub use config::{TrainingConfig, CONFIG_KEYS};

use crate::autodiff::{Tape, Var};
use crate::evaluation;
use crate::market_data::{FeaturePanel, FEATURE_DIM};
use crate::model::graph::ParamVars;
use crate::model::{
    forward_day, Checkpoint, CheckpointError, DayState, Dropout, Model, ModelError, ModelOptions,
    ModelParameters, ReturnVector, StateVars,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training data error: {0}")]
    Data(String),
    #[error("loss diverged (non-finite) on {0}")]
    Divergence(NaiveDate),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parameters initialized for `config`, for Alpha360 inputs.
pub fn init_params(config: &TrainingConfig) -> ModelParameters {
    ModelParameters::init(
        FEATURE_DIM,
        config.embedding_size,
        config.separate_head_weights,
        config.seed,
    )
}

fn check_sequence(panels: &[FeaturePanel], need_labels: bool) -> Result<(), TrainingError> {
    if panels.is_empty() {
        return Err(TrainingError::Data("no panels".into()));
    }
    for w in panels.windows(2) {
        if w[0].date >= w[1].date {
            return Err(TrainingError::Data(format!(
                "panel dates not increasing at {}",
                w[1].date
            )));
        }
    }
    for p in panels {
        if p.len() < 2 {
            return Err(TrainingError::Data(format!(
                "panel {} has {} stocks; at least 2 required",
                p.date,
                p.len()
            )));
        }
        if need_labels && !p.has_any_label() {
            return Err(TrainingError::Data(format!(
                "panel {} has no labels",
                p.date
            )));
        }
    }
    Ok(())
}

/// Realized returns for the labelled rows of each panel.
pub fn realized_returns(panels: &[FeaturePanel]) -> Vec<ReturnVector> {
    panels
        .iter()
        .map(|p| {
            let (ids, values) = p
                .stock_ids
                .iter()
                .zip(&p.labels)
                .filter_map(|(id, l)| l.map(|l| (id.clone(), l)))
                .unzip();
            ReturnVector {
                date: p.date,
                stock_ids: ids,
                values,
            }
        })
        .collect()
}

/// Restricts predictions to the rows that have a label in the matching panel.
pub fn restrict_to_labelled(
    predictions: &[ReturnVector],
    panels: &[FeaturePanel],
) -> Vec<ReturnVector> {
    predictions
        .iter()
        .zip(panels)
        .map(|(r, p)| {
            let (ids, values) = r
                .stock_ids
                .iter()
                .zip(&r.values)
                .zip(&p.labels)
                .filter_map(|((id, v), l)| l.map(|_| (id.clone(), *v)))
                .unzip();
            ReturnVector {
                date: r.date,
                stock_ids: ids,
                values,
            }
        })
        .collect()
}

struct WindowPass {
    /// Sum of squared residuals over the window.
    total: Option<Var>,
    count: usize,
    predictions: Vec<ReturnVector>,
    state: StateVars,
}

fn window_pass(
    tape: &mut Tape,
    p: &ParamVars,
    options: ModelOptions,
    panels: &[FeaturePanel],
    prev: Option<&DayState>,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<WindowPass, TrainingError> {
    let mut state = prev.map(|s| StateVars::from_values(tape, s));
    let mut total: Option<Var> = None;
    let mut count = 0;
    let mut predictions = Vec::with_capacity(panels.len());
    for panel in panels {
        let dr = dropout
            .as_mut()
            .map(|(rate, rng)| Dropout { rate: *rate, rng });
        let out = forward_day(
            tape,
            p,
            options,
            panel.date,
            &panel.stock_ids,
            &panel.features,
            state.as_ref(),
            dr,
        )?;
        let n = panel.len();
        let labels = Array2::from_shape_fn((n, 1), |(j, _)| panel.labels[j].unwrap_or(0.0));
        let mask = Array2::from_shape_fn(
            (n, 1),
            |(j, _)| if panel.labels[j].is_some() { 1.0 } else { 0.0 },
        );
        let labels = tape.leaf(labels);
        let mask = tape.leaf(mask);
        let diff = tape.sub(out.prediction, labels);
        let diff = tape.mul(diff, mask);
        let sq = tape.sum_squares(diff);
        if !tape.value(sq)[[0, 0]].is_finite() {
            return Err(TrainingError::Divergence(panel.date));
        }
        count += panel.labels.iter().filter(|l| l.is_some()).count();
        total = Some(match total {
            Some(t) => tape.add(t, sq),
            None => sq,
        });
        predictions.push(ReturnVector {
            date: panel.date,
            stock_ids: panel.stock_ids.clone(),
            values: tape.value(out.prediction).column(0).to_vec(),
        });
        state = Some(out.state);
    }
    Ok(WindowPass {
        total,
        count,
        predictions,
        state: state.expect("window is non-empty"),
    })
}

fn gradients_of(tape: &Tape, p: &ParamVars, loss: Var) -> Vec<Array2<f64>> {
    let grads = tape.backward(loss);
    p.all().map(|(_, v)| grads.get_or_zeros(tape, v)).collect()
}

/// Mean squared error over a sequence from a cold start, without dropout.
pub fn sequence_loss(
    params: &ModelParameters,
    options: ModelOptions,
    panels: &[FeaturePanel],
) -> Result<f64, TrainingError> {
    check_sequence(panels, true)?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let pass = window_pass(&mut tape, &p, options, panels, None, None)?;
    let total = pass.total.expect("non-empty");
    Ok(tape.value(total)[[0, 0]] / pass.count as f64)
}

/// Sequence loss and its gradient for every parameter block, in [`crate::model::Param::ALL`] order.
/// Backpropagates through the whole sequence from a cold start, without dropout.
pub fn loss_and_gradients(
    params: &ModelParameters,
    options: ModelOptions,
    panels: &[FeaturePanel],
) -> Result<(f64, Vec<Array2<f64>>), TrainingError> {
    check_sequence(panels, true)?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let pass = window_pass(&mut tape, &p, options, panels, None, None)?;
    let loss = tape.scale(pass.total.expect("non-empty"), 1.0 / pass.count as f64);
    Ok((tape.value(loss)[[0, 0]], gradients_of(&tape, &p, loss)))
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    /// Mean squared error over every labelled stock-day of the epoch.
    pub loss: f64,
    /// Predictions made during the epoch, with the parameters current at each window.
    pub predictions: Vec<ReturnVector>,
}

/// One pass over the chronological training panels.
///
/// State starts cold (topics and expectations initialized from the first day's
/// embeddings), is carried day to day, and is detached every `bptt_window` days,
/// where one optimizer step is taken on that window's mean squared error.
pub fn run_epoch(
    params: &mut ModelParameters,
    panels: &[FeaturePanel],
    config: &TrainingConfig,
    optimizer: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<EpochOutcome, TrainingError> {
    config.validate()?;
    check_sequence(panels, true)?;
    let options = config.model_options();
    let mut state: Option<DayState> = None;
    let mut sum = 0.0;
    let mut count = 0;
    let mut predictions = Vec::with_capacity(panels.len());
    for window in panels.chunks(config.bptt_window) {
        let mut tape = Tape::new();
        let p = ParamVars::register(&mut tape, params);
        let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut *rng));
        let pass = window_pass(&mut tape, &p, options, window, state.as_ref(), dropout)?;
        let total = pass.total.expect("non-empty");
        sum += tape.value(total)[[0, 0]];
        count += pass.count;
        predictions.extend(pass.predictions);
        state = Some(pass.state.to_values(&tape));
        if pass.count > 0 {
            let loss = tape.scale(total, 1.0 / pass.count as f64);
            let mut grads = gradients_of(&tape, &p, loss);
            clip_global_norm(&mut grads, config.grad_clip_norm);
            optimizer.step(params, &grads);
        }
    }
    let loss = sum / count as f64;
    if !loss.is_finite() {
        return Err(TrainingError::Divergence(
            panels.last().expect("non-empty").date,
        ));
    }
    Ok(EpochOutcome { loss, predictions })
}

/// Rolls state through `warmup` without computing any loss, then predicts each of
/// `panels`. Labels are never read.
pub fn predict(
    params: &ModelParameters,
    options: ModelOptions,
    panels: &[FeaturePanel],
    warmup: &[FeaturePanel],
) -> Result<Vec<ReturnVector>, TrainingError> {
    if !warmup.is_empty() {
        check_sequence(warmup, false)?;
    }
    if panels.is_empty() {
        return Ok(Vec::new());
    }
    check_sequence(panels, false)?;
    if let (Some(last), Some(first)) = (warmup.last(), panels.first()) {
        if last.date >= first.date {
            return Err(TrainingError::Data(format!(
                "warmup ends {} but predictions start {}",
                last.date, first.date
            )));
        }
        let max_step = warmup
            .windows(2)
            .chain(panels.windows(2))
            .map(|w| (w[1].date - w[0].date).num_days())
            .max()
            .unwrap_or(1);
        if (first.date - last.date).num_days() > max_step {
            warn!(
                "gap between warmup ({}) and prediction start ({}); state may be stale",
                last.date, first.date
            );
        }
    }
    let mut model = Model::new(params.clone(), options);
    for p in warmup {
        model.step(p.date, &p.stock_ids, &p.features)?;
    }
    panels
        .iter()
        .map(|p| {
            model
                .step(p.date, &p.stock_ids, &p.features)
                .map_err(TrainingError::from)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ic: Option<f64>,
    pub seconds: f64,
    /// Set on epochs whose parameters became the retained checkpoint.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRunRecord {
    pub epochs: Vec<EpochRecord>,
    pub config: TrainingConfig,
    pub seed: u64,
    pub best_epoch: usize,
}

impl TrainingRunRecord {
    /// `epoch,train_loss,valid_ic,checkpoint`. Timings are left out so reruns are byte-identical.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "valid_ic", "checkpoint"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.valid_ic.map_or_else(|| "NaN".into(), |v| v.to_string()),
                e.checkpoint
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: ModelParameters,
    pub record: TrainingRunRecord,
}

/// Trains for `config.epochs` epochs, keeping the parameters with the highest
/// validation IC. Without validation panels the final epoch is kept.
///
/// When `checkpoint` is given, the retained parameters are written there each
/// time they change.
pub fn fit(
    mut params: ModelParameters,
    train: &[FeaturePanel],
    valid: &[FeaturePanel],
    config: &TrainingConfig,
    checkpoint: Option<&Path>,
) -> Result<FitOutcome, TrainingError> {
    config.validate()?;
    check_sequence(train, true)?;
    if let (Some(last), Some(first)) = (train.last(), valid.first()) {
        if last.date >= first.date {
            return Err(TrainingError::Data(
                "validation panels must follow the training panels".into(),
            ));
        }
    }
    if valid.is_empty() {
        warn!("no validation panels; keeping the final epoch");
    }
    let options = config.model_options();
    let stocks = train.iter().map(FeaturePanel::len).max().unwrap_or(0);
    let mut optimizer = Adam::new(
        &params,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let valid_truth = realized_returns(valid);

    let mut best: Option<(Option<f64>, ModelParameters, usize)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let outcome = run_epoch(&mut params, train, config, &mut optimizer, &mut rng)?;
        let valid_ic = if valid.is_empty() {
            None
        } else {
            let preds = predict(&params, options, valid, train)?;
            let preds = restrict_to_labelled(&preds, valid);
            evaluation::mean_ic(&preds, &valid_truth)
                .map_err(|e| TrainingError::Data(e.to_string()))?
        };
        let improved = match &best {
            None => true,
            Some(_) if valid.is_empty() => true,
            Some((prev, _, _)) => match (valid_ic, prev) {
                (Some(v), Some(b)) => v > *b,
                (Some(_), None) => true,
                _ => false,
            },
        };
        let mut saved = None;
        if improved {
            best = Some((valid_ic, params.clone(), epoch));
            if let Some(path) = checkpoint {
                Checkpoint::new(params.clone(), stocks).save(path)?;
                saved = Some(path.to_path_buf());
            }
        }
        info!(
            "epoch {epoch}: train loss {:.6e}, valid IC {}",
            outcome.loss,
            valid_ic.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: outcome.loss,
            valid_ic,
            seconds: started.elapsed().as_secs_f64(),
            checkpoint: saved,
        });
    }
    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(FitOutcome {
        best: best_params,
        record: TrainingRunRecord {
            epochs,
            config: config.clone(),
            seed: config.seed,
            best_epoch,
        },
    })
}
