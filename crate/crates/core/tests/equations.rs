mod common;

use ndarray::{array, Array2};
use rand::Rng;
use tidal::model::{
    self, Model, ModelOptions, ModelParameters, Param, RecurrentState, ReturnVector,
};
use tidal::training::{self, Adam, TrainingConfig};

use common::*;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!(rel_err(a, b) <= tol, "{a} vs {b}");
}

fn zeros(n: usize, d: usize) -> RecurrentState {
    RecurrentState::zeros(n, d)
}

#[test]
fn encoder_with_zero_weights_outputs_zero() {
    let p = ModelParameters::zeros(5, 4, false);
    let x = to_array(&random_mat(&mut rng(1), 3, 5, 2.0));
    let out = model::encode_temporal(&p, &x, &zeros(3, 4)).unwrap();
    assert!(out.hidden.iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_is_deterministic_and_matches_reference_cell() {
    let mut r = rng(2);
    let p = random_params(&mut r, 5, 4, false, 0.7);
    let x = random_mat(&mut r, 3, 5, 1.0);
    let h = random_mat(&mut r, 3, 4, 1.0);
    let c = random_mat(&mut r, 3, 4, 1.0);
    let state = RecurrentState {
        hidden: to_array(&h),
        cell: to_array(&c),
    };
    let a = model::encode_temporal(&p, &to_array(&x), &state).unwrap();
    let b = model::encode_temporal(&p, &to_array(&x), &state).unwrap();
    assert_eq!(a, b);
    let (want_h, want_c) = encoder_step(&p, &x, &h, &c);
    assert!(max_rel_err_mat(&to_mat(&a.hidden), &want_h) < 1e-12);
    assert!(max_rel_err_mat(&to_mat(&a.cell), &want_c) < 1e-12);
}

#[test]
fn encoder_rejects_non_finite_features() {
    let p = ModelParameters::zeros(2, 2, false);
    let x = array![[1.0, 2.0], [f64::NAN, 0.0]];
    assert!(matches!(
        model::encode_temporal(&p, &x, &zeros(2, 2)),
        Err(model::ModelError::NonFiniteInput { row: 1 })
    ));
}

#[test]
fn tanimoto_reference_values() {
    assert_eq!(
        model::tanimoto(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap(),
        1.0
    );
    assert_eq!(model::tanimoto(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert_close(
        model::tanimoto(&[2.0, 0.0], &[1.0, 0.0]).unwrap(),
        2.0 / 3.0,
        1e-15,
    );
    assert!(model::tanimoto(&[0.0, 0.0], &[0.0, 0.0]).is_err());
}

#[test]
fn two_stocks_assign_to_each_other() {
    let mut r = rng(3);
    for _ in 0..20 {
        let t = to_array(&random_mat(&mut r, 2, 3, 1.0));
        let s = to_array(&random_mat(&mut r, 2, 3, 1.0));
        assert_eq!(model::assign_topics(&t, &s).unwrap(), vec![1, 0]);
    }
}

#[test]
fn stock_joins_its_nearest_other_topic() {
    // Stock 1 sits next to topic 0; its own topic is excluded even though identical.
    let topics = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let stocks = array![[0.0, 0.9, 0.1], [0.9, 1.0, 0.0], [0.0, 0.2, 1.0]];
    let phi = model::assign_topics(&topics, &stocks).unwrap();
    assert_eq!(phi[1], 0);
    assert_eq!(phi, assign(&to_mat(&topics), &to_mat(&stocks)));
}

#[test]
fn assignment_ties_go_to_lowest_index() {
    let topics = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
    let stocks = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
    assert_eq!(
        model::assign_topics(&topics, &stocks).unwrap(),
        vec![1, 0, 0]
    );
}

#[test]
fn assignment_matches_exhaustive_search() {
    let mut r = rng(4);
    let t = random_mat(&mut r, 5, 3, 1.0);
    let s = random_mat(&mut r, 5, 3, 1.0);
    assert_eq!(
        model::assign_topics(&to_array(&t), &to_array(&s)).unwrap(),
        assign(&t, &s)
    );
}

#[test]
fn assignment_needs_two_stocks() {
    let one = array![[1.0, 2.0]];
    assert!(model::assign_topics(&one, &one).is_err());
}

#[test]
fn valid_set_is_the_image_of_the_assignment() {
    assert_eq!(model::valid_topics(&[1, 0, 0]), vec![0, 1]);
    assert_eq!(model::valid_topics(&[0, 0, 0]), vec![0]);
    assert_eq!(model::valid_topics(&[1, 0]), vec![0, 1]);
}

#[test]
fn zero_topic_weights_zero_the_valid_rows() {
    let p = ModelParameters::zeros(2, 2, false);
    let topics = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let stocks = array![[0.0, 2.0], [2.0, 0.0], [1.0, 0.0]];
    let next = model::update_topics(&p, &topics, &stocks, &[1, 0, 0], &[0, 1]).unwrap();
    assert_eq!(next, array![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]);
}

#[test]
fn topic_update_hand_instance() {
    // Identity topic weight, zero bias. Similarities: stock 0 to topic 1 is 2/3,
    // stock 1 to topic 0 is 2/3, stock 2 to topic 0 is 1.
    let mut p = ModelParameters::zeros(2, 2, false);
    p[Param::TopicWeight] = Array2::eye(2);
    let topics = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let stocks = array![[0.0, 2.0], [2.0, 0.0], [1.0, 0.0]];
    let phi = model::assign_topics(&topics, &stocks).unwrap();
    assert_eq!(phi, vec![1, 0, 0]);
    let next =
        model::update_topics(&p, &topics, &stocks, &phi, &model::valid_topics(&phi)).unwrap();
    assert_close(next[[0, 0]], (2.0f64 / 3.0 * 2.0 + 1.0).tanh(), 1e-15);
    assert_eq!(next[[0, 1]], 0.0);
    assert_eq!(next[[1, 0]], 0.0);
    assert_close(next[[1, 1]], (2.0f64 / 3.0 * 2.0).tanh(), 1e-15);
    assert_eq!(next.row(2).to_vec(), vec![1.0, 1.0]);
}

#[test]
fn single_valid_topic_gets_all_attention() {
    let mut r = rng(5);
    let p = random_params(&mut r, 2, 3, false, 0.5);
    let topics = random_mat(&mut r, 3, 3, 1.0);
    let e = random_mat(&mut r, 3, 3, 1.0);
    let (alpha, attended) =
        model::expectation_attention(&p, &to_array(&topics), &to_array(&e), &[2]).unwrap();
    assert!(alpha.iter().all(|&a| a == 1.0));
    let wp = to_mat(&p[Param::ExpectationPrevWeight]);
    let wt = to_mat(&p[Param::ExpectationTopicWeight]);
    let b = &p[Param::ExpectationUpdateBias];
    for j in 0..3 {
        for m in 0..3 {
            let pre: f64 = (0..3)
                .map(|k| e[j][k] * wp[k][m] + topics[2][k] * wt[k][m])
                .sum::<f64>()
                + b[[0, m]];
            assert_close(attended[[j, m]], pre.tanh(), 1e-14);
        }
    }
}

#[test]
fn equally_similar_topics_split_attention() {
    let p = ModelParameters::zeros(2, 2, false);
    let topics = array![[1.0, 0.0], [0.0, 1.0]];
    let e = array![[1.0, 1.0], [2.0, 2.0]];
    let (alpha, _) = model::expectation_attention(&p, &topics, &e, &[0, 1]).unwrap();
    assert_eq!(alpha, array![[0.5, 0.5], [0.5, 0.5]]);
}

#[test]
fn attention_matches_softmax_of_similarities() {
    let mut r = rng(6);
    let p = random_params(&mut r, 2, 3, false, 0.5);
    let topics = random_mat(&mut r, 4, 3, 1.0);
    let e = random_mat(&mut r, 4, 3, 1.0);
    let valid = [0, 2, 3];
    let (alpha, attended) =
        model::expectation_attention(&p, &to_array(&topics), &to_array(&e), &valid).unwrap();
    let (want_alpha, want_attended) = expectation_attention(&p, &topics, &e, &valid);
    assert!(max_rel_err_mat(&to_mat(&alpha), &want_alpha) < 1e-12);
    assert!(max_rel_err_mat(&to_mat(&attended), &want_attended) < 1e-12);
}

#[test]
fn expectation_lstm_zero_weights_and_reference_cell() {
    let zero = ModelParameters::zeros(2, 3, false);
    let x = to_array(&random_mat(&mut rng(7), 2, 3, 1.0));
    assert!(model::advance_expectation(&zero, &x, &zeros(2, 3))
        .hidden
        .iter()
        .all(|&v| v == 0.0));

    let mut r = rng(8);
    let p = random_params(&mut r, 2, 3, false, 0.7);
    let x = random_mat(&mut r, 1, 3, 1.0);
    let h = random_mat(&mut r, 1, 3, 1.0);
    let c = random_mat(&mut r, 1, 3, 1.0);
    let state = RecurrentState {
        hidden: to_array(&h),
        cell: to_array(&c),
    };
    let a = model::advance_expectation(&p, &to_array(&x), &state);
    assert_eq!(a, model::advance_expectation(&p, &to_array(&x), &state));
    let (want_h, want_c) = expectation_step(&p, &x, &h, &c);
    assert!(max_rel_err_mat(&to_mat(&a.hidden), &want_h) < 1e-12);
    assert!(max_rel_err_mat(&to_mat(&a.cell), &want_c) < 1e-12);
}

#[test]
fn zero_parameters_predict_zero() {
    let p = ModelParameters::zeros(2, 3, false);
    let mut r = rng(9);
    let s = to_array(&random_mat(&mut r, 3, 3, 1.0));
    let h = model::predict_returns(&p, &s, &s, &s, &[0, 1]).unwrap();
    assert!(h.prediction.iter().all(|&v| v == 0.0));
}

#[test]
fn two_stock_prediction_matches_scalar_evaluation() {
    for separate in [false, true] {
        let mut r = rng(10);
        let p = random_params(&mut r, 2, 2, separate, 0.9);
        let s = random_mat(&mut r, 2, 2, 1.0);
        let t = random_mat(&mut r, 2, 2, 1.0);
        let e = random_mat(&mut r, 2, 2, 1.0);
        let got = model::predict_returns(&p, &to_array(&s), &to_array(&t), &to_array(&e), &[0, 1])
            .unwrap();
        let want = predict(&p, &s, &t, &e, &[0, 1]);
        assert!(max_rel_err(&got.prediction, &want.prediction) < 1e-13);
        assert!(max_rel_err(&got.stock, &want.stock) < 1e-13);
        assert!(max_rel_err(&got.topic, &want.topic) < 1e-13);
        assert!(max_rel_err(&got.expectation, &want.expectation) < 1e-13);
    }
}

fn rv(values: &[f64]) -> ReturnVector {
    ReturnVector {
        date: date(0),
        stock_ids: ids(values.len()),
        values: values.to_vec(),
    }
}

#[test]
fn loss_reference_values() {
    let r = rv(&[0.1, -0.1]);
    let truth = std::slice::from_ref(&r);
    assert_eq!(model::loss(truth, truth).unwrap(), 0.0);
    assert_close(model::loss(&[rv(&[0.0, 0.0])], truth).unwrap(), 0.01, 1e-15);
    let base = model::loss(&[rv(&[0.3, 0.2])], truth).unwrap();
    let doubled = model::loss(&[rv(&[0.5, 0.5])], truth).unwrap();
    assert_close(doubled, 4.0 * base, 1e-14);
}

#[test]
fn loss_rejects_misaligned_days() {
    let a = rv(&[0.1, 0.2]);
    let mut b = a.clone();
    b.date = date(1);
    assert!(model::loss(&[a], &[b]).is_err());
}

#[test]
fn day_step_matches_reference_over_several_days() {
    let mut r = rng(11);
    let p = random_params(&mut r, 4, 3, false, 0.8);
    let panels = random_panels(&mut r, 5, 4, 4);
    let mut model = Model::new(p.clone(), ModelOptions::default());
    let mut state = None;
    for panel in &panels {
        let got = model
            .step(panel.date, &panel.stock_ids, &panel.features)
            .unwrap();
        let (want, next) = day(&p, &to_mat(&panel.features), state.as_ref());
        assert!(max_rel_err(&got.values, &want) < 1e-12);
        state = Some(next);
    }
}

#[test]
fn new_stock_joins_with_cold_state() {
    let mut r = rng(12);
    let p = random_params(&mut r, 3, 3, false, 0.8);
    let mut model = Model::new(p, ModelOptions::default());
    let x = to_array(&random_mat(&mut r, 3, 3, 1.0));
    model.step(date(0), &ids(3), &x).unwrap();
    let ids4: Vec<String> = ["s0", "s1", "s2", "new"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let x4 = to_array(&random_mat(&mut r, 4, 3, 1.0));
    let out = model.step(date(1), &ids4, &x4).unwrap();
    assert_eq!(out.values.len(), 4);
    let state = model.state().unwrap();
    assert_eq!(state.stock_ids, ids4);
    assert!(out.values.iter().all(|v| v.abs() < 1.0));
}

#[test]
fn zero_learning_rate_keeps_parameters_and_reports_loss() {
    let mut r = rng(13);
    let panels = random_panels(&mut r, 4, 3, 5);
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        embedding_size: 4,
        bptt_window: 2,
        ..Default::default()
    };
    let mut params = ModelParameters::init(5, 4, false, 0);
    let before = params.clone();
    let mut adam = Adam::new(&params, 0.0, 0.9, 0.999, 1e-8);
    let outcome = training::run_epoch(&mut params, &panels, &cfg, &mut adam, &mut rng(0)).unwrap();
    assert_eq!(params, before);
    assert!(outcome.loss.is_finite() && outcome.loss > 0.0);
}

#[test]
fn one_day_sequence_loss_is_the_day_loss() {
    let mut r = rng(14);
    let p = random_params(&mut r, 3, 3, false, 0.8);
    let panels = random_panels(&mut r, 1, 2, 3);
    let pred = training::predict(&p, ModelOptions::default(), &panels, &[]).unwrap();
    let truth = training::realized_returns(&panels);
    let want = model::loss(&pred, &truth).unwrap();
    assert_eq!(
        training::sequence_loss(&p, ModelOptions::default(), &panels).unwrap(),
        want
    );
}

#[test]
fn epoch_predictions_match_stateful_prediction_without_updates() {
    let mut r = rng(15);
    let panels = random_panels(&mut r, 6, 3, 5);
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        dropout: 0.0,
        embedding_size: 4,
        bptt_window: 2,
        ..Default::default()
    };
    let mut params = ModelParameters::init(5, 4, false, 1);
    let mut adam = Adam::new(&params, 0.0, 0.9, 0.999, 1e-8);
    let epoch = training::run_epoch(&mut params, &panels, &cfg, &mut adam, &mut rng(0)).unwrap();
    let predicted = training::predict(&params, cfg.model_options(), &panels, &[]).unwrap();
    assert_eq!(epoch.predictions, predicted);

    let warm = training::predict(&params, cfg.model_options(), &panels[3..], &panels[..3]).unwrap();
    assert_eq!(warm, predicted[3..]);
}

#[test]
fn epochs_start_from_a_cold_state() {
    let mut r = rng(16);
    let panels = random_panels(&mut r, 5, 3, 5);
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        embedding_size: 4,
        bptt_window: 3,
        ..Default::default()
    };
    let mut params = ModelParameters::init(5, 4, false, 2);
    let mut adam = Adam::new(&params, 0.0, 0.9, 0.999, 1e-8);
    let a = training::run_epoch(&mut params, &panels, &cfg, &mut adam, &mut rng(9)).unwrap();
    let b = training::run_epoch(&mut params, &panels, &cfg, &mut adam, &mut rng(9)).unwrap();
    assert_eq!(a.loss, b.loss);
}

#[test]
fn training_reduces_loss_on_a_planted_signal() {
    let mut r = rng(17);
    let mut panels = random_panels(&mut r, 30, 6, 4);
    for p in &mut panels {
        for j in 0..6 {
            p.labels[j] = Some(0.5 * p.features[[j, 0]] + r.gen_range(-0.01..0.01));
        }
    }
    let cfg = TrainingConfig {
        epochs: 50,
        embedding_size: 8,
        learning_rate: 0.01,
        bptt_window: 10,
        dropout: 0.0,
        ..Default::default()
    };
    let out = training::fit(
        ModelParameters::init(4, 8, false, 0),
        &panels,
        &[],
        &cfg,
        None,
    )
    .unwrap();
    let losses: Vec<f64> = out.record.epochs.iter().map(|e| e.train_loss).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(losses[49] < losses[0], "{} !< {}", losses[49], losses[0]);
}

#[test]
fn single_epoch_record_and_reproducible_checkpoint() {
    let mut r = rng(18);
    let panels = random_panels(&mut r, 8, 4, 5);
    let cfg = TrainingConfig {
        epochs: 1,
        embedding_size: 4,
        bptt_window: 4,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.ckpt"));
        let out = training::fit(
            ModelParameters::init(5, 4, false, 0),
            &panels[..6],
            &panels[6..],
            &cfg,
            Some(&path),
        )
        .unwrap();
        assert_eq!(out.record.epochs.len(), 1);
        assert_eq!(out.record.best_epoch, 1);
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
