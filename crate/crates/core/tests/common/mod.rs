//! Reference implementations written with plain loops over `Vec<Vec<f64>>`,
//! plus random instance generators shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use chrono::{Days, NaiveDate};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tidal::market_data::{Bar, BarStore, FeaturePanel};
use tidal::model::{ModelParameters, Param, ReturnVector};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn to_array(m: &Mat) -> Array2<f64> {
    let cols = m.first().map_or(0, Vec::len);
    Array2::from_shape_fn((m.len(), cols), |(i, j)| m[i][j])
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

/// Parameters with every block, biases included, drawn uniformly from `[-scale, scale)`.
pub fn random_params(
    rng: &mut ChaCha8Rng,
    input: usize,
    d: usize,
    separate: bool,
    scale: f64,
) -> ModelParameters {
    let blocks = Param::ALL
        .iter()
        .map(|p| {
            let (r, c) = p.shape(input, d, separate);
            to_array(&random_mat(rng, r, c, scale))
        })
        .collect();
    ModelParameters::from_blocks(input, d, separate, 0, blocks).expect("shapes match")
}

pub fn date(i: u64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .checked_add_days(Days::new(i))
        .unwrap()
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("s{j}")).collect()
}

/// `n`-stock panels of random features and labels on consecutive dates.
pub fn random_panels(
    rng: &mut ChaCha8Rng,
    days: usize,
    n: usize,
    input: usize,
) -> Vec<FeaturePanel> {
    (0..days)
        .map(|i| FeaturePanel {
            date: date(i as u64),
            stock_ids: ids(n),
            features: to_array(&random_mat(rng, n, input, 1.0)),
            labels: (0..n).map(|_| Some(rng.gen_range(-0.5..0.5))).collect(),
        })
        .collect()
}

/// Close-price bars for stocks `s0..`, one row of `closes` per day.
pub fn bar_store(closes: &[Vec<f64>]) -> BarStore {
    let mut bars = Vec::new();
    for (i, day) in closes.iter().enumerate() {
        for (j, &c) in day.iter().enumerate() {
            bars.push(Bar {
                stock_id: format!("s{j}"),
                date: date(i as u64),
                open: c,
                high: c,
                low: c,
                close: c,
                vwap: c,
                volume: 1000.0,
            });
        }
    }
    BarStore::from_bars(bars).expect("valid bars")
}

fn block(p: &ModelParameters, which: Param) -> Mat {
    to_mat(&p[which])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Row vector times matrix.
fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (k, xk) in x.iter().enumerate() {
        for m in 0..cols {
            out[m] += xk * w[k][m];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn tanimoto(a: &[f64], b: &[f64]) -> f64 {
    let ab = dot(a, b);
    ab / (dot(a, a) + dot(b, b) - ab)
}

/// Exhaustive nearest-other-topic search over all pairs.
pub fn assign(topics: &Mat, stocks: &Mat) -> Vec<usize> {
    let n = stocks.len();
    let mut out = Vec::with_capacity(n);
    for j2 in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for j1 in 0..n {
            if j1 == j2 {
                continue;
            }
            let v = tanimoto(&topics[j1], &stocks[j2]);
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((j1, v)),
            }
        }
        out.push(best.unwrap().0);
    }
    out
}

pub fn valid(assignment: &[usize]) -> Vec<usize> {
    assignment
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn update_topics(
    p: &ModelParameters,
    topics: &Mat,
    stocks: &Mat,
    assignment: &[usize],
    valid: &[usize],
) -> Mat {
    let w = block(p, Param::TopicWeight);
    let b = block(p, Param::TopicBias);
    let d = stocks[0].len();
    let mut out = topics.clone();
    for &t in valid {
        let mut pooled = vec![0.0; d];
        for (j2, &a) in assignment.iter().enumerate() {
            if a == t {
                let s = tanimoto(&topics[t], &stocks[j2]);
                for k in 0..d {
                    pooled[k] += s * stocks[j2][k];
                }
            }
        }
        let pre = vec_mat(&pooled, &w);
        out[t] = (0..d).map(|m| (pre[m] + b[0][m]).tanh()).collect();
    }
    out
}

/// Softmax over the valid topics of Tanimoto similarity to `query`. Returns
/// `(weights, weighted sum of topics)`.
pub fn attend(query: &[f64], topics: &Mat, valid: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let e: Vec<f64> = valid
        .iter()
        .map(|&t| tanimoto(query, &topics[t]).exp())
        .collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|v| v / z).collect();
    let d = query.len();
    let mut ctx = vec![0.0; d];
    for (k, &t) in valid.iter().enumerate() {
        for m in 0..d {
            ctx[m] += w[k] * topics[t][m];
        }
    }
    (w, ctx)
}

pub fn expectation_attention(
    p: &ModelParameters,
    topics: &Mat,
    expectations: &Mat,
    valid: &[usize],
) -> (Mat, Mat) {
    let wp = block(p, Param::ExpectationPrevWeight);
    let wt = block(p, Param::ExpectationTopicWeight);
    let b = block(p, Param::ExpectationUpdateBias);
    let mut alpha = Vec::new();
    let mut attended = Vec::new();
    for e in expectations {
        let (w, ctx) = attend(e, topics, valid);
        let own = vec_mat(e, &wp);
        let top = vec_mat(&ctx, &wt);
        attended.push(
            (0..e.len())
                .map(|m| (own[m] + top[m] + b[0][m]).tanh())
                .collect(),
        );
        alpha.push(w);
    }
    (alpha, attended)
}

/// One LSTM cell step per row with gates stacked `[i | f | g | o]`.
pub fn lstm(w_in: &Mat, w_h: &Mat, bias: &Mat, x: &Mat, h: &Mat, c: &Mat) -> (Mat, Mat) {
    let d = h[0].len();
    let mut h_next = Vec::new();
    let mut c_next = Vec::new();
    for r in 0..x.len() {
        let zx = vec_mat(&x[r], w_in);
        let zh = vec_mat(&h[r], w_h);
        let z: Vec<f64> = (0..4 * d).map(|m| zx[m] + zh[m] + bias[0][m]).collect();
        let mut hr = vec![0.0; d];
        let mut cr = vec![0.0; d];
        for m in 0..d {
            let i = sigmoid(z[m]);
            let f = sigmoid(z[d + m]);
            let g = z[2 * d + m].tanh();
            let o = sigmoid(z[3 * d + m]);
            cr[m] = f * c[r][m] + i * g;
            hr[m] = o * cr[m].tanh();
        }
        h_next.push(hr);
        c_next.push(cr);
    }
    (h_next, c_next)
}

pub fn encoder_step(p: &ModelParameters, x: &Mat, h: &Mat, c: &Mat) -> (Mat, Mat) {
    lstm(
        &block(p, Param::EncoderInput),
        &block(p, Param::EncoderHidden),
        &block(p, Param::EncoderBias),
        x,
        h,
        c,
    )
}

pub fn expectation_step(p: &ModelParameters, x: &Mat, h: &Mat, c: &Mat) -> (Mat, Mat) {
    lstm(
        &block(p, Param::ExpectationInput),
        &block(p, Param::ExpectationHidden),
        &block(p, Param::ExpectationBias),
        x,
        h,
        c,
    )
}

pub struct Heads {
    pub prediction: Vec<f64>,
    pub stock: Vec<f64>,
    pub topic: Vec<f64>,
    pub expectation: Vec<f64>,
    pub beta: Mat,
}

fn scalar_head(x: &[f64], w: &Mat, b: &Mat) -> f64 {
    let mut s = b[0][0];
    for k in 0..x.len() {
        s += x[k] * w[k][0];
    }
    s.tanh()
}

pub fn predict(
    p: &ModelParameters,
    stocks: &Mat,
    topics: &Mat,
    expectations: &Mat,
    valid: &[usize],
) -> Heads {
    let (ws, bs) = (
        block(p, Param::StockHeadWeight),
        block(p, Param::StockHeadBias),
    );
    let (we, be) = (
        block(p, Param::ExpectationHeadWeight),
        block(p, Param::ExpectationHeadBias),
    );
    let (wo, bo) = (
        block(p, Param::TopicReadoutWeight),
        block(p, Param::TopicReadoutBias),
    );
    let (wt, bt) = (
        block(p, Param::TopicHeadWeight),
        block(p, Param::TopicHeadBias),
    );
    let (wc, bc) = (
        block(p, Param::CombinerWeight),
        block(p, Param::CombinerBias),
    );
    let mut h = Heads {
        prediction: vec![],
        stock: vec![],
        topic: vec![],
        expectation: vec![],
        beta: vec![],
    };
    for j in 0..stocks.len() {
        let rs = scalar_head(&stocks[j], &ws, &bs);
        let re = scalar_head(&expectations[j], &we, &be);
        let (beta, ctx) = attend(&stocks[j], topics, valid);
        let pre = vec_mat(&ctx, &wo);
        let o: Vec<f64> = (0..pre.len()).map(|m| (pre[m] + bo[0][m]).tanh()).collect();
        let rt = scalar_head(&o, &wt, &bt);
        let combined = if p.separate_head_weights {
            wc[0][0] * rs + wc[1][0] * rt + wc[2][0] * re + bc[0][0]
        } else {
            wc[0][0] * (rs + rt + re) + bc[0][0]
        };
        h.prediction.push(combined.tanh());
        h.stock.push(rs);
        h.topic.push(rt);
        h.expectation.push(re);
        h.beta.push(beta);
    }
    h
}

/// State carried between days by the reference day step.
#[derive(Clone)]
pub struct State {
    pub stocks: Mat,
    pub encoder_cell: Mat,
    pub topics: Mat,
    pub expectations: Mat,
    pub expectation_cell: Mat,
}

/// One day of the full model for a fixed stock set. The first day starts with zero
/// recurrent memory and topics and expectations equal to the day's embeddings.
pub fn day(p: &ModelParameters, features: &Mat, prev: Option<&State>) -> (Vec<f64>, State) {
    let n = features.len();
    let d = p.embedding_size;
    let zeros = vec![vec![0.0; d]; n];
    let (h, c) = prev.map_or((&zeros, &zeros), |s| (&s.stocks, &s.encoder_cell));
    let (stocks, encoder_cell) = encoder_step(p, features, h, c);
    let topics = prev.map_or(stocks.clone(), |s| s.topics.clone());
    let e_prev = prev.map_or(stocks.clone(), |s| s.expectations.clone());
    let ec_prev = prev.map_or(zeros.clone(), |s| s.expectation_cell.clone());
    let phi = assign(&topics, &stocks);
    let v = valid(&phi);
    let topics = update_topics(p, &topics, &stocks, &phi, &v);
    let (_, attended) = expectation_attention(p, &topics, &e_prev, &v);
    let (expectations, expectation_cell) = expectation_step(p, &attended, &e_prev, &ec_prev);
    let heads = predict(p, &stocks, &topics, &expectations, &v);
    (
        heads.prediction,
        State {
            stocks,
            encoder_cell,
            topics,
            expectations,
            expectation_cell,
        },
    )
}

/// Mean squared error over a sequence run from a cold start.
pub fn sequence_mse(p: &ModelParameters, panels: &[FeaturePanel]) -> f64 {
    let mut state: Option<State> = None;
    let (mut sum, mut count) = (0.0, 0);
    for panel in panels {
        let (pred, next) = day(p, &to_mat(&panel.features), state.as_ref());
        for (r, l) in pred.iter().zip(&panel.labels) {
            if let Some(l) = l {
                sum += (r - l) * (r - l);
                count += 1;
            }
        }
        state = Some(next);
    }
    sum / count as f64
}

pub fn mse(pred: &[ReturnVector], truth: &[ReturnVector]) -> f64 {
    let (mut sum, mut count) = (0.0, 0);
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.values.iter().zip(&t.values) {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    sum / count as f64
}

/// Two-pass covariance over standard deviations.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Rank by counting: one plus the number of smaller values plus half the other ties.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|u| *u < v).count() as f64;
            let equal = x.iter().filter(|u| *u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Worst peak-to-trough loss over every ordered pair of dates.
pub fn drawdown(curve: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..curve.len() {
        for j in i..curve.len() {
            worst = worst.min(curve[j] / curve[i] - 1.0);
        }
    }
    worst
}

/// Mean daily IC on `valid` of a ridge-stabilized least-squares fit on `train`.
pub fn linear_fit_ic(train: &[FeaturePanel], valid: &[FeaturePanel]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let k = train[0].features.ncols() + 1;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for p in train {
        for (row, l) in p.features.rows().into_iter().zip(&p.labels) {
            let Some(y) = l else { continue };
            let x = DVector::from_iterator(k, row.iter().copied().chain([1.0]));
            xtx += &x * x.transpose();
            xty += &x * *y;
        }
    }
    for i in 0..k {
        xtx[(i, i)] += 1e-6;
    }
    let w = xtx
        .cholesky()
        .expect("regularized normal matrix is positive definite")
        .solve(&xty);
    let mut ics = Vec::new();
    for p in valid {
        let (pred, y): (Vec<f64>, Vec<f64>) = p
            .features
            .rows()
            .into_iter()
            .zip(&p.labels)
            .filter_map(|(r, l)| {
                l.map(|l| {
                    (
                        r.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[k - 1],
                        l,
                    )
                })
            })
            .unzip();
        let ic = pearson(&pred, &y);
        if ic.is_finite() {
            ics.push(ic);
        }
    }
    ics.iter().sum::<f64>() / ics.len() as f64
}

/// `|a − b|` relative to the larger magnitude, floored at 1 so values near zero
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

pub fn max_rel_err_mat(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| max_rel_err(x, y))
        .fold(0.0, f64::max)
}
