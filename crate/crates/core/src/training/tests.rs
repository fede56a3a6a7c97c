use super::ps::ps_train_from;
use super::*;
use crate::data::{generate_synthetic, SyntheticSpec};

fn small_model(d: usize, k: usize) -> HainConfig {
    HainConfig {
        n_features: d,
        embed_dim: 4,
        group_size: 3,
        key_dim: 4,
        reduced_dim: 3.min(d),
        hidden_dim: 8,
        n_classes: k,
        global_window: None,
        seed: 5,
    }
}

fn small_data(n: usize, d: usize, k: usize, seed: u64) -> Dataset {
    let mut spec = SyntheticSpec::new(n, d, k, 2.min(d));
    spec.separation = 3.0;
    spec.seed = seed;
    generate_synthetic(&spec).unwrap().0
}

fn cfg(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(epochs);
    c.batch_size = 4;
    c.seed = 17;
    c
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let data = small_data(20, 7, 2, 1);
    let model = small_model(7, 2);
    let init = init_params(&model, &Rng::new(model.seed)).unwrap();
    let mut c = cfg(3);
    c.learning_rate = 0.0;
    let out = train(&data, None, &model, &c).unwrap();
    assert_eq!(out.params, init);
    assert_eq!(out.log.records.len(), 3);
}

#[test]
fn separable_two_feature_problem_is_learned() {
    let mut rng = Rng::new(4);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![sign * (1.0 + rng.uniform()), rng.normal() * 0.3]
        })
        .collect();
    let y = (0..40).map(|i| i % 2).collect();
    let data = Dataset::new(
        Matrix::from_rows(&rows).unwrap(),
        y,
        vec!["a".into(), "b".into()],
        vec!["p".into(), "n".into()],
    )
    .unwrap();
    let mut model = small_model(2, 2);
    model.group_size = 1;
    model.reduced_dim = 1;
    let mut c = cfg(200);
    c.lr_decay = 1.0;
    c.learning_rate = 0.1;
    let mut params = init_params(&model, &Rng::new(model.seed)).unwrap();
    let mut solved_at = None;
    for epoch in 0..200 {
        let mut one = c.clone();
        one.epochs = 1;
        one.seed = epoch;
        params = train_from(params, &data, None, &one).unwrap().params;
        if evaluate(&params, &data, &c.weights).unwrap().1 == 1.0 {
            solved_at = Some(epoch);
            break;
        }
    }
    assert!(solved_at.is_some(), "never reached full training accuracy");
}

#[test]
fn training_is_reproducible_to_the_byte() {
    let data = small_data(24, 8, 3, 2);
    let model = small_model(8, 3);
    let a = train(&data, Some(&data), &model, &cfg(3)).unwrap();
    let b = train(&data, Some(&data), &model, &cfg(3)).unwrap();
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    assert_eq!(a.params, b.params);
}

#[test]
fn log_keys_follow_fixed_order() {
    let data = small_data(12, 6, 2, 3);
    let out = train(&data, Some(&data), &small_model(6, 2), &cfg(2)).unwrap();
    let text = out.log.to_jsonl();
    let first = text.lines().next().unwrap();
    let keys = [
        "epoch",
        "loss_pred",
        "loss_attn",
        "loss_sparse",
        "loss_consist",
        "loss_total",
        "val_loss_total",
        "val_accuracy",
        "tau",
        "n_selected",
        "temperature",
    ];
    let positions: Vec<usize> = keys
        .iter()
        .map(|k| {
            first
                .find(&format!("\"{k}\":"))
                .unwrap_or_else(|| panic!("{k} missing"))
        })
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(TrainLog::from_jsonl(&text).unwrap(), out.log);
    let epochs: Vec<usize> = out.log.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2]);
}

#[test]
fn first_epoch_uses_initial_threshold() {
    let data = small_data(12, 6, 2, 3);
    let out = train(&data, None, &small_model(6, 2), &cfg(2)).unwrap();
    assert_eq!(out.log.records[0].tau, INITIAL_THRESHOLD);
    assert_ne!(out.log.records[1].tau, INITIAL_THRESHOLD);
}

#[test]
fn final_selection_matches_its_threshold() {
    let data = small_data(30, 9, 3, 4);
    let out = train(&data, None, &small_model(9, 3), &cfg(3)).unwrap();
    let s = &out.selection;
    assert_eq!(s.selected, select_above(&s.alpha_snapshot, s.threshold));
    assert_eq!(s.next_threshold, percentile_threshold(&s.alpha_mean, 0.1).unwrap());
    assert!((s.alpha_mean.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn empty_dataset_is_contract_error() {
    let data = small_data(12, 6, 2, 3).subset(&[]);
    assert!(matches!(
        train(&data, None, &small_model(6, 2), &cfg(1)),
        Err(HainError::Contract(_))
    ));
}

#[test]
fn divergence_reports_epoch() {
    let data = small_data(12, 6, 2, 3);
    let mut c = cfg(3);
    c.learning_rate = 1e300;
    match train(&data, None, &small_model(6, 2), &c) {
        Err(HainError::Training { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_worker_without_staleness_matches_train() {
    let data = small_data(22, 7, 2, 6);
    let model = small_model(7, 2);
    let init = init_params(&model, &Rng::new(model.seed)).unwrap();
    let c = cfg(3);
    let a = train_from(init.clone(), &data, Some(&data), &c).unwrap();
    let b = ps_train_from(init, &data, Some(&data), &c).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    assert_eq!(a.selection, b.selection);
}

/// Plain sequential SGD over the interleaved shard schedule.
fn sequential_sharded(init: HainParams, data: &Dataset, c: &TrainConfig) -> HainParams {
    let mut params = init;
    let root = Rng::new(c.seed);
    for epoch in 0..c.epochs {
        let mut per_worker: Vec<Vec<Vec<usize>>> = Vec::new();
        for k in 0..c.workers {
            let mut order: Vec<usize> = (0..data.n_samples()).filter(|i| i % c.workers == k).collect();
            root.derive(streams::shuffle(epoch, k)).shuffle(&mut order);
            per_worker.push(order.chunks(c.batch_size).map(|b| b.to_vec()).collect());
        }
        let mut round = 0;
        loop {
            let mut any = false;
            for q in &per_worker {
                if let Some(batch) = q.get(round) {
                    any = true;
                    let mut acc = params.zeros_like();
                    for &i in batch {
                        let s = sample_gradient(&params, data.row(i), data.y[i], &c.weights).unwrap();
                        for (a, g) in acc.iter_mut().zip(&s.grads) {
                            a.add_assign(g);
                        }
                    }
                    acc.iter_mut().for_each(|a| a.scale_in_place(1.0 / batch.len() as f64));
                    acc[crate::model::tensor_index("feature_pos")].scale_in_place(c.offset_lr_scale);
                    acc[crate::model::tensor_index("feature_scale")].scale_in_place(c.scale_lr_scale);
                    params.sgd_step(&acc, c.learning_rate_at(epoch));
                }
            }
            if !any {
                break;
            }
            round += 1;
        }
    }
    params
}

#[test]
fn zero_staleness_equals_synchronous_sharded_sgd() {
    let data = small_data(23, 7, 2, 8);
    let model = small_model(7, 2);
    let init = init_params(&model, &Rng::new(model.seed)).unwrap();
    for workers in [2, 3, 5] {
        let mut c = cfg(2);
        c.workers = workers;
        c.offset_lr_scale = 3.0;
        c.scale_lr_scale = 0.5;
        let ps = ps_train_from(init.clone(), &data, None, &c).unwrap();
        assert_eq!(ps.params, sequential_sharded(init.clone(), &data, &c), "W={workers}");
    }
}

#[test]
fn stale_updates_change_trajectory_but_stay_finite() {
    let data = small_data(24, 7, 2, 8);
    let model = small_model(7, 2);
    let mut c = cfg(2);
    c.workers = 3;
    let sync = ps_train(&data, None, &model, &c).unwrap();
    c.max_staleness = 2;
    let stale = ps_train(&data, None, &model, &c).unwrap();
    assert!(stale.params.is_finite());
    assert_ne!(stale.params, sync.params);
    let again = ps_train(&data, None, &model, &c).unwrap();
    assert_eq!(stale.params, again.params);
}

#[test]
fn moving_average_examples() {
    assert_eq!(moving_average(&[4.0, 2.0, 0.0, 2.0], 2), vec![4.0, 3.0, 1.0, 1.0]);
    assert_eq!(moving_average(&[], 3), Vec::<f64>::new());
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::new(5);
    assert!(c.validate().is_ok());
    c.target_sparsity = 1.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::new(5);
    c.workers = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::new(5);
    c.temperature.end = 0.0;
    assert!(c.validate().is_err());
}
