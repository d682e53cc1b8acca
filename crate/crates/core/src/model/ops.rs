//! The model's equations as standalone functions over plain matrices.
//!
//! Each op records onto a throwaway tape using the same building blocks as the
//! training forward pass, so these functions are exactly what training runs.

use ndarray::{Array2, Axis};

use super::graph::{self, LstmWeights, ParamVars};
use super::{ModelError, ModelParameters, ReturnVector};
use crate::autodiff::{DegenerateSimilarity, Tape};

/// Hidden and cell memory of a recurrent layer, one row per stock.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Array2<f64>,
    pub cell: Array2<f64>,
}

impl RecurrentState {
    pub fn zeros(rows: usize, d: usize) -> Self {
        Self {
            hidden: Array2::zeros((rows, d)),
            cell: Array2::zeros((rows, d)),
        }
    }
}

/// Prediction head outputs for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrediction {
    pub prediction: Vec<f64>,
    pub stock: Vec<f64>,
    pub topic: Vec<f64>,
    pub expectation: Vec<f64>,
    /// `n × |valid|` topic weights per stock, columns in `valid` order.
    pub beta: Array2<f64>,
}

/// Tanimoto coefficient `a·b / (|a|² + |b|² − a·b)`.
pub fn tanimoto(a: &[f64], b: &[f64]) -> Result<f64, DegenerateSimilarity> {
    assert_eq!(a.len(), b.len(), "tanimoto needs equal-length vectors");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    let denom = na + nb - dot;
    if denom == 0.0 {
        return Err(DegenerateSimilarity { left: 0, right: 0 });
    }
    Ok(dot / denom)
}

/// Runs the temporal encoder one day forward.
pub fn encode_temporal(
    params: &ModelParameters,
    features: &Array2<f64>,
    state: &RecurrentState,
) -> Result<RecurrentState, ModelError> {
    if let Some((row, _)) = features
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(ModelError::NonFiniteInput { row });
    }
    if features.ncols() != params.input_size {
        return Err(ModelError::Shape(format!(
            "expected {} features, got {}",
            params.input_size,
            features.ncols()
        )));
    }
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let x = tape.leaf(features.clone());
    let h = tape.leaf(state.hidden.clone());
    let c = tape.leaf(state.cell.clone());
    let (h, c) = graph::lstm_step(&mut tape, LstmWeights::encoder(&p), x, h, c);
    Ok(RecurrentState {
        hidden: tape.value(h).clone(),
        cell: tape.value(c).clone(),
    })
}

/// For each stock, the index of its most similar topic other than its own.
/// Ties go to the lowest topic index.
pub fn assign_topics(topics: &Array2<f64>, stocks: &Array2<f64>) -> Result<Vec<usize>, ModelError> {
    graph::assign(topics, stocks)
}

/// Topics that are the nearest topic of at least one stock, ascending.
pub fn valid_topics(assignment: &[usize]) -> Vec<usize> {
    graph::valid_set(assignment)
}

/// Updates valid topic rows by Tanimoto-weighted pooling of their assigned stocks.
/// Rows outside `valid` are returned unchanged.
pub fn update_topics(
    params: &ModelParameters,
    topics: &Array2<f64>,
    stocks: &Array2<f64>,
    assignment: &[usize],
    valid: &[usize],
) -> Result<Array2<f64>, ModelError> {
    check_valid(valid, topics.nrows())?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let t = tape.leaf(topics.clone());
    let s = tape.leaf(stocks.clone());
    let (next, _) = graph::update_topics(&mut tape, &p, t, s, assignment, valid)?;
    Ok(tape.value(next).clone())
}

/// Attention of each stock's previous expectation over the valid topics, then the
/// expectation update. Returns `(alpha, Ê)` with `alpha` of shape `n × |valid|`.
pub fn expectation_attention(
    params: &ModelParameters,
    topics: &Array2<f64>,
    expectations: &Array2<f64>,
    valid: &[usize],
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    check_valid(valid, topics.nrows())?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let valid_topics = tape.leaf(topics.select(Axis(0), valid));
    let e = tape.leaf(expectations.clone());
    let (alpha, attended) = graph::expectation_attention(&mut tape, &p, valid_topics, e)?;
    Ok((tape.value(alpha).clone(), tape.value(attended).clone()))
}

/// One step of the expectation LSTM. The new expectations are `hidden` of the result.
pub fn advance_expectation(
    params: &ModelParameters,
    attended: &Array2<f64>,
    state: &RecurrentState,
) -> RecurrentState {
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let x = tape.leaf(attended.clone());
    let h = tape.leaf(state.hidden.clone());
    let c = tape.leaf(state.cell.clone());
    let (h, c) = graph::lstm_step(&mut tape, LstmWeights::expectation(&p), x, h, c);
    RecurrentState {
        hidden: tape.value(h).clone(),
        cell: tape.value(c).clone(),
    }
}

/// Combines the stock, topic and expectation heads into the predicted return.
pub fn predict_returns(
    params: &ModelParameters,
    stocks: &Array2<f64>,
    topics: &Array2<f64>,
    expectations: &Array2<f64>,
    valid: &[usize],
) -> Result<HeadPrediction, ModelError> {
    check_valid(valid, topics.nrows())?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params);
    let s = tape.leaf(stocks.clone());
    let vt = tape.leaf(topics.select(Axis(0), valid));
    let e = tape.leaf(expectations.clone());
    let out = graph::predict(&mut tape, &p, s, s, vt, e)?;
    let col = |v| tape.value(v).column(0).to_vec();
    Ok(HeadPrediction {
        prediction: col(out.prediction),
        stock: col(out.stock),
        topic: col(out.topic),
        expectation: col(out.expectation),
        beta: tape.value(out.beta).clone(),
    })
}

/// Mean squared error over all stock-days.
///
/// With a constant cross-section size this is `Σ_i |r_i − r̂_i|² / (D·n)`; when the
/// cross-section varies the denominator is the total number of stock-days.
pub fn loss(predicted: &[ReturnVector], truth: &[ReturnVector]) -> Result<f64, ModelError> {
    if predicted.is_empty() {
        return Err(ModelError::Shape("loss needs at least one day".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        if p.date != t.date || p.stock_ids != t.stock_ids || p.values.len() != t.values.len() {
            return Err(ModelError::Alignment(p.date.min(t.date)));
        }
        sum += p
            .values
            .iter()
            .zip(&t.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += p.values.len();
    }
    if predicted.len() != truth.len() {
        let first_missing = if predicted.len() > truth.len() {
            predicted[truth.len()].date
        } else {
            truth[predicted.len()].date
        };
        return Err(ModelError::Alignment(first_missing));
    }
    Ok(sum / count as f64)
}

fn check_valid(valid: &[usize], n: usize) -> Result<(), ModelError> {
    if valid.is_empty() {
        return Err(ModelError::Shape("valid topic set is empty".into()));
    }
    if valid.windows(2).any(|w| w[0] >= w[1]) || valid.iter().any(|&v| v >= n) {
        return Err(ModelError::Shape(format!(
            "valid set {valid:?} must be ascending indices below {n}"
        )));
    }
    Ok(())
}
