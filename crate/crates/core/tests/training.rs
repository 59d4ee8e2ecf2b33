mod common;

use slayer::optim::OptimizerState;
use slayer::trainer::{evaluate, train_epoch, Split};

#[test]
fn poisson_loss_trends_to_zero() {
    let task = common::poisson_task(0, 2000);
    let (mut net, cfg) = (task.net, task.config);
    let mut state = OptimizerState::new(cfg.optimizer, &net).unwrap();
    let mut losses = vec![evaluate(&net, &task.data, &cfg, 0, Split::Train).unwrap().loss];
    for epoch in 1..=cfg.epochs {
        train_epoch(&mut net, &task.data, &cfg, &mut state, epoch).unwrap();
        let loss = evaluate(&net, &task.data, &cfg, epoch, Split::Train).unwrap().loss;
        losses.push(loss);
        if loss == 0.0 {
            break;
        }
    }
    assert_eq!(*losses.last().unwrap(), 0.0, "did not reach the target train");
    // The loss is piecewise constant in the weights, so compare 50-epoch block means.
    let means: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(means.last().unwrap() < &means[0], "{means:?}");
    assert!(means[1] < means[0], "{means:?}");
}

#[test]
fn precise_training_reports_match_accuracy() {
    let task = common::poisson_task(1, 300);
    let (mut net, cfg) = (task.net, task.config);
    let mut state = OptimizerState::new(cfg.optimizer, &net).unwrap();
    let before = evaluate(&net, &task.data, &cfg, 0, Split::Train).unwrap();
    assert_eq!(before.accuracy, 0.0);
    for epoch in 1..=cfg.epochs {
        train_epoch(&mut net, &task.data, &cfg, &mut state, epoch).unwrap();
    }
    let after = evaluate(&net, &task.data, &cfg, cfg.epochs, Split::Train).unwrap();
    assert_eq!(after.accuracy, 1.0);
    assert!(after.loss < 0.01 * before.loss);
}

#[test]
fn count_training_improves_accuracy() {
    let task = common::count_task(6, 40, 20, 30);
    let (mut net, cfg) = (task.net, task.config);
    let mut state = OptimizerState::new(cfg.optimizer, &net).unwrap();
    let before = evaluate(&net, &task.train, &cfg, 0, Split::Train).unwrap();
    for epoch in 1..=cfg.epochs {
        train_epoch(&mut net, &task.train, &cfg, &mut state, epoch).unwrap();
    }
    let after = evaluate(&net, &task.train, &cfg, cfg.epochs, Split::Train).unwrap();
    assert!(after.loss < before.loss);
    assert!(after.accuracy > before.accuracy && after.accuracy >= 0.8, "{before:?} -> {after:?}");
}
