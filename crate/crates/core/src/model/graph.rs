//! Tape-level building blocks shared by the public equation ops and the day step.

use ndarray::Array2;

use super::params::{ModelParameters, Param};
use super::ModelError;
use crate::autodiff::{Tape, Var};

/// Parameters registered as leaves on one tape.
#[derive(Debug, Clone)]
pub(crate) struct ParamVars {
    vars: Vec<Var>,
    pub separate_head_weights: bool,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParameters) -> Self {
        let vars = params.blocks().map(|(_, b)| tape.leaf(b.clone())).collect();
        Self {
            vars,
            separate_head_weights: params.separate_head_weights,
        }
    }

    pub fn get(&self, p: Param) -> Var {
        self.vars[p as usize]
    }

    pub fn all(&self) -> impl Iterator<Item = (Param, Var)> + '_ {
        Param::ALL.iter().copied().zip(self.vars.iter().copied())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmWeights {
    pub input: Var,
    pub hidden: Var,
    pub bias: Var,
}

impl LstmWeights {
    pub fn encoder(p: &ParamVars) -> Self {
        Self {
            input: p.get(Param::EncoderInput),
            hidden: p.get(Param::EncoderHidden),
            bias: p.get(Param::EncoderBias),
        }
    }

    pub fn expectation(p: &ParamVars) -> Self {
        Self {
            input: p.get(Param::ExpectationInput),
            hidden: p.get(Param::ExpectationHidden),
            bias: p.get(Param::ExpectationBias),
        }
    }
}

pub(crate) fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// One LSTM step for every row. Returns `(h', c')`.
pub(crate) fn lstm_step(tape: &mut Tape, w: LstmWeights, x: Var, h: Var, c: Var) -> (Var, Var) {
    let d = tape.value(h).ncols();
    let xw = tape.matmul(x, w.input);
    let hw = tape.matmul(h, w.hidden);
    let z = tape.add(xw, hw);
    let z = tape.add_row(z, w.bias);
    let zi = tape.slice_cols(z, 0, d);
    let zf = tape.slice_cols(z, d, d);
    let zg = tape.slice_cols(z, 2 * d, d);
    let zo = tape.slice_cols(z, 3 * d, d);
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

/// Most similar topic for each stock excluding its own index, ties to the lowest index.
pub(crate) fn assign(topics: &Array2<f64>, stocks: &Array2<f64>) -> Result<Vec<usize>, ModelError> {
    let n = stocks.nrows();
    if n < 2 || topics.nrows() != n {
        return Err(ModelError::TooFewStocks(n));
    }
    let sim = crate::autodiff::tanimoto_matrix(topics, stocks)?;
    Ok((0..n)
        .map(|j2| {
            let mut best = usize::MAX;
            let mut best_val = f64::NEG_INFINITY;
            for j1 in (0..n).filter(|&j1| j1 != j2) {
                let v = sim[[j1, j2]];
                if best == usize::MAX || v > best_val {
                    best = j1;
                    best_val = v;
                }
            }
            best
        })
        .collect())
}

pub(crate) fn valid_set(assignment: &[usize]) -> Vec<usize> {
    let mut v = assignment.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Topic update for the valid rows. Returns `(T', updated valid rows)`.
///
/// Only rows of `topics` listed in `valid` are read by the computation; the rest
/// are copied through unchanged.
pub(crate) fn update_topics(
    tape: &mut Tape,
    p: &ParamVars,
    topics: Var,
    stocks: Var,
    assignment: &[usize],
    valid: &[usize],
) -> Result<(Var, Var), ModelError> {
    let n = tape.value(topics).nrows();
    let topics_valid = tape.pick_rows(&[topics], valid.iter().map(|&j| (0, j)).collect());
    let sim = tape.tanimoto(topics_valid, stocks)?;
    let mut mask = Array2::zeros((valid.len(), assignment.len()));
    for (j2, &topic) in assignment.iter().enumerate() {
        let k = valid
            .binary_search(&topic)
            .expect("assigned topic is valid");
        mask[[k, j2]] = 1.0;
    }
    let mask = tape.leaf(mask);
    let weights = tape.mul(sim, mask);
    let pooled = tape.matmul(weights, stocks);
    let pre = affine(
        tape,
        pooled,
        p.get(Param::TopicWeight),
        p.get(Param::TopicBias),
    );
    let updated = tape.tanh(pre);
    let picks = (0..n)
        .map(|j| match valid.binary_search(&j) {
            Ok(k) => (1, k),
            Err(_) => (0, j),
        })
        .collect();
    let next = tape.pick_rows(&[topics, updated], picks);
    Ok((next, updated))
}

/// Softmax over valid topics of the Tanimoto similarity to each row of `queries`.
/// Returns `(weights n × v, context n × d)`.
pub(crate) fn topic_attention(
    tape: &mut Tape,
    valid_topics: Var,
    queries: Var,
) -> Result<(Var, Var), ModelError> {
    let sim = tape.tanimoto(queries, valid_topics)?;
    let weights = tape.softmax_rows(sim);
    let context = tape.matmul(weights, valid_topics);
    Ok((weights, context))
}

/// Expectation attention. Returns `(alpha n × v, Ê n × d)`.
pub(crate) fn expectation_attention(
    tape: &mut Tape,
    p: &ParamVars,
    valid_topics: Var,
    expectations: Var,
) -> Result<(Var, Var), ModelError> {
    let (alpha, context) = topic_attention(tape, valid_topics, expectations)?;
    let own = tape.matmul(expectations, p.get(Param::ExpectationPrevWeight));
    let ctx = tape.matmul(context, p.get(Param::ExpectationTopicWeight));
    let sum = tape.add(own, ctx);
    let pre = tape.add_row(sum, p.get(Param::ExpectationUpdateBias));
    Ok((alpha, tape.tanh(pre)))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadOutputs {
    pub prediction: Var,
    pub stock: Var,
    pub topic: Var,
    pub expectation: Var,
    pub beta: Var,
}

/// Three-component prediction head. `stocks_head`/`expectations_head` are the inputs
/// to the stock and expectation heads (dropout already applied when training).
pub(crate) fn predict(
    tape: &mut Tape,
    p: &ParamVars,
    stocks: Var,
    stocks_head: Var,
    valid_topics: Var,
    expectations_head: Var,
) -> Result<HeadOutputs, ModelError> {
    let pre = affine(
        tape,
        stocks_head,
        p.get(Param::StockHeadWeight),
        p.get(Param::StockHeadBias),
    );
    let r_stock = tape.tanh(pre);
    let pre = affine(
        tape,
        expectations_head,
        p.get(Param::ExpectationHeadWeight),
        p.get(Param::ExpectationHeadBias),
    );
    let r_expectation = tape.tanh(pre);
    let (beta, context) = topic_attention(tape, valid_topics, stocks)?;
    let pre = affine(
        tape,
        context,
        p.get(Param::TopicReadoutWeight),
        p.get(Param::TopicReadoutBias),
    );
    let o = tape.tanh(pre);
    let pre = affine(
        tape,
        o,
        p.get(Param::TopicHeadWeight),
        p.get(Param::TopicHeadBias),
    );
    let r_topic = tape.tanh(pre);
    let combined = if p.separate_head_weights {
        let stacked = tape.concat_cols(&[r_stock, r_topic, r_expectation]);
        affine(
            tape,
            stacked,
            p.get(Param::CombinerWeight),
            p.get(Param::CombinerBias),
        )
    } else {
        let s = tape.add(r_stock, r_topic);
        let s = tape.add(s, r_expectation);
        affine(
            tape,
            s,
            p.get(Param::CombinerWeight),
            p.get(Param::CombinerBias),
        )
    };
    let prediction = tape.tanh(combined);
    Ok(HeadOutputs {
        prediction,
        stock: r_stock,
        topic: r_topic,
        expectation: r_expectation,
        beta,
    })
}

/// Stock-head-only prediction used by the plain-LSTM ablation.
pub(crate) fn predict_stock_only(tape: &mut Tape, p: &ParamVars, stocks_head: Var) -> Var {
    let pre = affine(
        tape,
        stocks_head,
        p.get(Param::StockHeadWeight),
        p.get(Param::StockHeadBias),
    );
    let r_stock = tape.tanh(pre);
    let w = if p.separate_head_weights {
        tape.pick_rows(&[p.get(Param::CombinerWeight)], vec![(0, 0)])
    } else {
        p.get(Param::CombinerWeight)
    };
    let pre = affine(tape, r_stock, w, p.get(Param::CombinerBias));
    tape.tanh(pre)
}
