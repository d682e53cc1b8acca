use std::collections::HashMap;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{self, LstmWeights, ParamVars};
use super::{ModelError, ModelParameters, ReturnVector};
use crate::autodiff::{Tape, Var};

/// Which prediction heads are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Stock head only; the topic and expectation modules are skipped.
    PlainLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelOptions {
    pub variant: Variant,
    /// Re-initialize topics from the day's stock embeddings every day instead of
    /// carrying the updated topics forward.
    pub topics_reinit_daily: bool,
}

/// Recurrent state after a day's forward pass, keyed by stock row.
#[derive(Debug, Clone, PartialEq)]
pub struct DayState {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    /// Stock embeddings, also the encoder's hidden state.
    pub stocks: Array2<f64>,
    pub encoder_cell: Array2<f64>,
    /// Topics after the day's update.
    pub topics: Array2<f64>,
    pub valid: Vec<usize>,
    /// Expectation embeddings output by the expectation LSTM.
    pub expectations: Array2<f64>,
    pub expectation_cell: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StateVars {
    pub date: NaiveDate,
    pub stock_ids: Vec<String>,
    pub stocks: Var,
    pub encoder_cell: Var,
    pub topics: Var,
    pub valid: Vec<usize>,
    pub expectations: Var,
    pub expectation_cell: Var,
}

impl StateVars {
    pub fn from_values(tape: &mut Tape, s: &DayState) -> Self {
        Self {
            date: s.date,
            stock_ids: s.stock_ids.clone(),
            stocks: tape.leaf(s.stocks.clone()),
            encoder_cell: tape.leaf(s.encoder_cell.clone()),
            topics: tape.leaf(s.topics.clone()),
            valid: s.valid.clone(),
            expectations: tape.leaf(s.expectations.clone()),
            expectation_cell: tape.leaf(s.expectation_cell.clone()),
        }
    }

    pub fn to_values(&self, tape: &Tape) -> DayState {
        DayState {
            date: self.date,
            stock_ids: self.stock_ids.clone(),
            stocks: tape.value(self.stocks).clone(),
            encoder_cell: tape.value(self.encoder_cell).clone(),
            topics: tape.value(self.topics).clone(),
            valid: self.valid.clone(),
            expectations: tape.value(self.expectations).clone(),
            expectation_cell: tape.value(self.expectation_cell).clone(),
        }
    }
}

pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let dim = tape.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(dim, || {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = tape.leaf(mask);
        tape.mul(x, m)
    }
}

#[derive(Clone, Copy)]
enum Fill {
    /// Row `j` of this matrix for a stock new at row `j`.
    Rows(Var),
    Zero,
}

pub(crate) struct DayOutput {
    pub prediction: Var,
    pub state: StateVars,
}

/// One day of the forward recursion: encode, assign and update topics, attend and
/// advance expectations, then predict.
///
/// Stocks carried over from `prev` keep their rows' state; stocks new to the
/// universe start with zero recurrent memory and topic/expectation rows taken from
/// their first-day embedding.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_day(
    tape: &mut Tape,
    p: &ParamVars,
    options: ModelOptions,
    date: NaiveDate,
    stock_ids: &[String],
    features: &Array2<f64>,
    prev: Option<&StateVars>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<DayOutput, ModelError> {
    let n = stock_ids.len();
    if let Some((row, _)) = features
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(ModelError::NonFiniteInput { row });
    }
    let d = tape.value(p.get(super::Param::EncoderHidden)).nrows();
    let prev_rows: Vec<Option<usize>> = match prev {
        Some(prev) => {
            let index: HashMap<&str, usize> = prev
                .stock_ids
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            stock_ids
                .iter()
                .map(|id| index.get(id.as_str()).copied())
                .collect()
        }
        None => vec![None; n],
    };
    let same_layout = prev.is_some_and(|s| s.stock_ids == stock_ids);
    let zero_row = tape.leaf(Array2::zeros((1, d)));
    let zeros = tape.leaf(Array2::zeros((n, d)));
    let align = |tape: &mut Tape, carried: Var, fill: Fill| -> Var {
        if same_layout {
            return carried;
        }
        let picks = prev_rows
            .iter()
            .enumerate()
            .map(|(j, r)| match (r, fill) {
                (Some(i), _) => (0, *i),
                (None, Fill::Rows(_)) => (1, j),
                (None, Fill::Zero) => (1, 0),
            })
            .collect();
        let source = match fill {
            Fill::Rows(v) => v,
            Fill::Zero => zero_row,
        };
        tape.pick_rows(&[carried, source], picks)
    };

    let (h_prev, c_prev) = match prev {
        Some(s) => (
            align(tape, s.stocks, Fill::Zero),
            align(tape, s.encoder_cell, Fill::Zero),
        ),
        None => (zeros, zeros),
    };
    let x = tape.leaf(features.clone());
    let (stocks, encoder_cell) = graph::lstm_step(tape, LstmWeights::encoder(p), x, h_prev, c_prev);

    if options.variant == Variant::PlainLstm {
        let head_in = match dropout.as_mut() {
            Some(dr) => dr.apply(tape, stocks),
            None => stocks,
        };
        let prediction = graph::predict_stock_only(tape, p, head_in);
        let state = StateVars {
            date,
            stock_ids: stock_ids.to_vec(),
            stocks,
            encoder_cell,
            topics: stocks,
            valid: Vec::new(),
            expectations: stocks,
            expectation_cell: encoder_cell,
        };
        return Ok(DayOutput { prediction, state });
    }

    let topics = match prev {
        _ if options.topics_reinit_daily => stocks,
        Some(s) => align(tape, s.topics, Fill::Rows(stocks)),
        None => stocks,
    };
    let (expectations_prev, expectation_cell_prev) = match prev {
        Some(s) => (
            align(tape, s.expectations, Fill::Rows(stocks)),
            align(tape, s.expectation_cell, Fill::Zero),
        ),
        None => (stocks, zeros),
    };

    let assignment = graph::assign(tape.value(topics), tape.value(stocks))?;
    let valid = graph::valid_set(&assignment);
    let (topics_next, valid_topics) =
        graph::update_topics(tape, p, topics, stocks, &assignment, &valid)?;
    let (_, attended) = graph::expectation_attention(tape, p, valid_topics, expectations_prev)?;
    let (expectations, expectation_cell) = graph::lstm_step(
        tape,
        LstmWeights::expectation(p),
        attended,
        expectations_prev,
        expectation_cell_prev,
    );

    let (stocks_head, expectations_head) = match dropout.as_mut() {
        Some(dr) => (dr.apply(tape, stocks), dr.apply(tape, expectations)),
        None => (stocks, expectations),
    };
    let heads = graph::predict(
        tape,
        p,
        stocks,
        stocks_head,
        valid_topics,
        expectations_head,
    )?;
    let state = StateVars {
        date,
        stock_ids: stock_ids.to_vec(),
        stocks,
        encoder_cell,
        topics: topics_next,
        valid,
        expectations,
        expectation_cell,
    };
    Ok(DayOutput {
        prediction: heads.prediction,
        state,
    })
}

/// Stateful inference wrapper: feeds one day at a time and keeps the recurrent,
/// topic and expectation state between calls.
#[derive(Debug, Clone)]
pub struct Model {
    params: ModelParameters,
    options: ModelOptions,
    state: Option<DayState>,
}

impl Model {
    pub fn new(params: ModelParameters, options: ModelOptions) -> Self {
        Self {
            params,
            options,
            state: None,
        }
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn options(&self) -> ModelOptions {
        self.options
    }

    pub fn state(&self) -> Option<&DayState> {
        self.state.as_ref()
    }

    /// Drops all state; the next day is treated as the first.
    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn step(
        &mut self,
        date: NaiveDate,
        stock_ids: &[String],
        features: &Array2<f64>,
    ) -> Result<ReturnVector, ModelError> {
        if features.nrows() != stock_ids.len() || features.ncols() != self.params.input_size {
            return Err(ModelError::Shape(format!(
                "features are {:?}, expected ({}, {})",
                features.dim(),
                stock_ids.len(),
                self.params.input_size
            )));
        }
        let mut tape = Tape::new();
        let p = ParamVars::register(&mut tape, &self.params);
        let prev = self
            .state
            .as_ref()
            .map(|s| StateVars::from_values(&mut tape, s));
        let out = forward_day(
            &mut tape,
            &p,
            self.options,
            date,
            stock_ids,
            features,
            prev.as_ref(),
            None,
        )?;
        let values = tape.value(out.prediction).column(0).to_vec();
        self.state = Some(out.state.to_values(&tape));
        Ok(ReturnVector {
            date,
            stock_ids: stock_ids.to_vec(),
            values,
        })
    }
}
