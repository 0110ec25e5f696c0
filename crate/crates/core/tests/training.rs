mod common;

use common::pipeline::{prepare, small_model_config, Prepared};
use tdan_core::corpus::SyntheticSpec;
use tdan_core::network::TdanModel;
use tdan_core::training::{evaluate_accuracy, train, TrainConfig};

fn small_task(seed: u64) -> Prepared {
    let spec = SyntheticSpec {
        source_labeled: 48,
        target_unlabeled: 48,
        target_labeled: 60,
        dev_size: 30,
        ..SyntheticSpec::default()
    };
    prepare(&spec, seed, 6, 100)
}

fn model(p: &Prepared, seed: u64) -> TdanModel {
    TdanModel::new(small_model_config(), p.pair.corpus.vocab.len(), seed).unwrap()
}

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        max_epochs,
        patience: max_epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_learning_rate_stops_after_patience() {
    let p = small_task(1);
    let mut m = model(&p, 1);
    let before = m.snapshot();
    let config = TrainConfig {
        lr: 0.0,
        weight_decay: 0.0,
        patience: 10,
        ..quick(50)
    };
    let state = train(&mut m, &p.data, &config, |_| {}).unwrap();
    assert_eq!(state.epoch, 10);
    assert!(state.stopped_early);
    assert_eq!(state.best_epoch, 0);
    assert!(state
        .history
        .iter()
        .all(|l| l.dev_accuracy == state.initial_dev_accuracy));
    assert_eq!(m.snapshot(), before);
}

#[test]
fn same_seed_same_history() {
    let p = small_task(2);
    let run = || {
        let mut m = model(&p, 3);
        let config = TrainConfig {
            seed: 9,
            ..quick(4)
        };
        let state = train(&mut m, &p.data, &config, |_| {}).unwrap();
        (state.history, m.snapshot())
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);

    let mut m = model(&p, 3);
    let other = train(
        &mut m,
        &p.data,
        &TrainConfig {
            seed: 10,
            ..quick(4)
        },
        |_| {},
    )
    .unwrap();
    assert_ne!(other.history, h1);
}

#[test]
fn logged_total_combines_both_losses() {
    let p = small_task(3);
    for rho in [0.0, 0.5, 1.0] {
        let mut m = model(&p, 4);
        let mut seen = Vec::new();
        let state = train(&mut m, &p.data, &TrainConfig { rho, ..quick(3) }, |l| {
            seen.push(l.clone())
        })
        .unwrap();
        assert_eq!(seen, state.history);
        for (t, line) in state.history.iter().enumerate() {
            assert!((line.l_total - (line.l_cls + rho * line.l_dom)).abs() < 1e-12);
            assert_eq!(line.epoch, t + 1);
            assert!(line.l_dom > 0.0 && line.l_cls > 0.0);
        }
        assert_eq!(state.history[0].lambda, 0.0);
    }
}

#[test]
fn best_dev_parameters_are_restored() {
    let p = small_task(4);
    let mut m = model(&p, 5);
    let state = train(&mut m, &p.data, &quick(12), |_| {}).unwrap();
    let best = state
        .history
        .iter()
        .map(|l| l.dev_accuracy)
        .fold(state.initial_dev_accuracy, f64::max);
    assert_eq!(state.best_dev_accuracy, best);
    assert_eq!(evaluate_accuracy(&m, &p.data.dev).unwrap(), best);
    if state.best_epoch > 0 {
        assert_eq!(state.history[state.best_epoch - 1].dev_accuracy, best);
    }
}

#[test]
fn training_learns_the_planted_markers() {
    let p = small_task(5);
    let mut m = model(&p, 6);
    let config = TrainConfig {
        rho: 0.0,
        ..quick(30)
    };
    let state = train(&mut m, &p.data, &config, |_| {}).unwrap();
    let fit = evaluate_accuracy(&m, &p.data.source).unwrap();
    assert!(state.best_dev_accuracy > 0.7, "{state:?}");
    assert!(fit > 0.8, "train accuracy {fit}");
}
