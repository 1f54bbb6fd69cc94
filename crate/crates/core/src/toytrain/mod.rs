//! Desk-scale multi-head trainer: shared tanh encoder, per-task sigmoid
//! heads, positive-weighted binary cross entropy, SGD with momentum, and
//! manual gradients checked against finite differences.
//!
//! After every epoch the trainer runs one extra forward pass over the full
//! training split and records the true-class probability of every
//! (task, point) pair into the dynamics log, so logged probabilities do
//! not depend on batch order within the epoch.

mod model;
mod suite;

pub use model::{batch_loss_and_grads, sgd_step, ParamBuffer, ToyModel, MODEL_FORMAT};
pub use suite::{
    make_suite, FactorSpec, Split, SuiteSpec, SyntheticTaskSuite, TaskSpec, SUITE_FORMAT,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrainingDynamicsLog;
use crate::error::{Error, Result};
use crate::specialize::LossWeights;

/// Probabilities are kept this far from 0 and 1 inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// ChaCha stream used for batch shuffling, separate from the stream that
/// initializes parameters.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub momentum: f64,
    /// When set, each task's positive instances are weighted by its
    /// negative/positive ratio on the training split.
    pub pos_weight: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.3,
            batch_size: 32,
            hidden_dim: 16,
            momentum: 0.9,
            pos_weight: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Argument(
                "batch_size and hidden_dim must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub(crate) fn bce_pos_weighted_raw(y_hat: f64, y: f64, pos_weight: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Binary cross entropy with a penalty on positive instances:
/// -(p * y * ln(y_hat) + (1 - y) * ln(1 - y_hat)), with y_hat clamped
/// 1e-7 away from the boundary.
pub fn bce_pos_weighted(y_hat: f64, y: u8, pos_weight: f64) -> Result<f64> {
    if !(pos_weight > 0.0) {
        return Err(Error::Argument(format!(
            "pos_weight must be positive, got {pos_weight}"
        )));
    }
    if !(0.0..=1.0).contains(&y_hat) {
        return Err(Error::Argument(format!(
            "prediction {y_hat} outside [0, 1]"
        )));
    }
    if y > 1 {
        return Err(Error::Argument(format!("label {y} is not binary")));
    }
    Ok(bce_pos_weighted_raw(y_hat, y as f64, pos_weight))
}

/// Imbalance penalty for one task: (#negatives / #positives) on the
/// training split, so the minority label gets more attention. Balanced
/// tasks get 1.
pub fn pos_weight_for_task(labels: &[u8]) -> Result<f64> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTask(format!(
            "labels are single-class ({positives} positive, {negatives} negative)"
        )));
    }
    Ok(negatives as f64 / positives as f64)
}

fn resolve_pos_weights(labels: &[Vec<u8>], enabled: bool) -> Result<Vec<f64>> {
    if enabled {
        labels.iter().map(|row| pos_weight_for_task(row)).collect()
    } else {
        Ok(vec![1.0; labels.len()])
    }
}

/// Shared training loop over an explicit label matrix (tasks x points).
fn run_training(
    model: &mut ToyModel,
    inputs: &[Vec<f64>],
    labels: &[Vec<u8>],
    task_weights: &[f64],
    config: &TrainerConfig,
    log: &mut TrainingDynamicsLog,
) -> Result<()> {
    config.validate()?;
    let n_points = inputs.len();
    let n_tasks = labels.len();
    if model.n_tasks != n_tasks {
        return Err(Error::Argument(format!(
            "model has {} heads, suite defines {n_tasks} tasks",
            model.n_tasks
        )));
    }
    if inputs.iter().any(|x| x.len() != model.input_dim) {
        return Err(Error::Argument("input width differs from model".into()));
    }
    if log.n_tasks() != n_tasks || log.n_points() != n_points {
        return Err(Error::Argument(format!(
            "log shaped ({}, {}), training data is ({n_tasks}, {n_points})",
            log.n_tasks(),
            log.n_points()
        )));
    }
    if task_weights.len() != n_tasks {
        return Err(Error::Argument(format!(
            "{} loss weights for {n_tasks} tasks",
            task_weights.len()
        )));
    }
    let pos_weights = resolve_pos_weights(labels, config.pos_weight)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut velocity = ParamBuffer::zeros_like(model);
    let mut order: Vec<usize> = (0..n_points).collect();

    let start_epoch = log.epoch_count() + 1;
    for epoch in start_epoch..start_epoch + config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<Vec<u8>> = labels
                .iter()
                .map(|row| chunk.iter().map(|&i| row[i]).collect())
                .collect();
            let ys_ref: Vec<&[u8]> = ys.iter().map(|r| r.as_slice()).collect();
            let mut grads = ParamBuffer::zeros_like(model);
            let loss = batch_loss_and_grads(
                model,
                &xs,
                &ys_ref,
                &pos_weights,
                task_weights,
                &mut grads,
            );
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            sgd_step(model, &grads, &mut velocity, config.learning_rate, config.momentum);
        }
        // End-of-epoch recording pass over the whole training split.
        for point in 0..n_points {
            let probs = model.predict(&inputs[point]);
            for task in 0..n_tasks {
                let p_true = if labels[task][point] == 1 {
                    probs[task]
                } else {
                    1.0 - probs[task]
                };
                log.record(epoch, task, point, p_true)?;
            }
        }
        log.flush()?;
    }
    Ok(())
}

/// Trains the model jointly on every task of the suite, logging dynamics
/// after each epoch. `loss_weights` scales each task's batch-mean loss
/// (Eq. 3 style); `None` means plain MTL with unit weights.
pub fn train(
    model: &mut ToyModel,
    suite: &SyntheticTaskSuite,
    config: &TrainerConfig,
    log: &mut TrainingDynamicsLog,
    loss_weights: Option<&LossWeights>,
) -> Result<()> {
    let weights = match loss_weights {
        Some(lw) => {
            if lw.weights().len() != suite.n_tasks() {
                return Err(Error::Argument(format!(
                    "{} loss weights for {} tasks",
                    lw.weights().len(),
                    suite.n_tasks()
                )));
            }
            lw.weights().to_vec()
        }
        None => vec![1.0; suite.n_tasks()],
    };
    run_training(
        model,
        suite.inputs(Split::Train),
        suite.label_rows(Split::Train),
        &weights,
        config,
        log,
    )
}

/// Single-task route: trains a one-head model on just `task`, logging its
/// dynamics as task 0 of a single-task log.
pub fn train_single_task(
    model: &mut ToyModel,
    suite: &SyntheticTaskSuite,
    task: usize,
    config: &TrainerConfig,
    log: &mut TrainingDynamicsLog,
) -> Result<()> {
    if task >= suite.n_tasks() {
        return Err(Error::Argument(format!(
            "task {task} out of range ({} tasks)",
            suite.n_tasks()
        )));
    }
    let labels = vec![suite.labels(Split::Train, task).to_vec()];
    run_training(
        model,
        suite.inputs(Split::Train),
        &labels,
        &[1.0],
        config,
        log,
    )
}

/// Compares the analytic gradient of the weighted batch loss against
/// central finite differences over every parameter; returns the largest
/// relative error.
pub fn grad_check(
    model: &ToyModel,
    inputs: &[Vec<f64>],
    labels: &[Vec<u8>],
    pos_weights: &[f64],
    task_weights: &[f64],
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Argument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let xs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
    let ys: Vec<&[u8]> = labels.iter().map(|r| r.as_slice()).collect();

    let mut grads = ParamBuffer::zeros_like(model);
    batch_loss_and_grads(model, &xs, &ys, pos_weights, task_weights, &mut grads);

    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    for k in 0..model.param_count() {
        let original = probe.get_param(k);
        probe.set_param(k, original + epsilon);
        let mut scratch = ParamBuffer::zeros_like(model);
        let plus = batch_loss_and_grads(&probe, &xs, &ys, pos_weights, task_weights, &mut scratch);
        probe.set_param(k, original - epsilon);
        let mut scratch = ParamBuffer::zeros_like(model);
        let minus = batch_loss_and_grads(&probe, &xs, &ys, pos_weights, task_weights, &mut scratch);
        probe.set_param(k, original);

        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads.get(model, k);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_suite(seed: u64) -> SyntheticTaskSuite {
        make_suite(
            3,
            8,
            vec![
                TaskSpec::Class { class: 0 },
                TaskSpec::Union { classes: vec![1, 2] },
                TaskSpec::ComplementOf { task: 1 },
            ],
            seed,
        )
        .unwrap()
    }

    fn quick_config(epochs: u32, seed: u64) -> TrainerConfig {
        TrainerConfig {
            epochs,
            learning_rate: 0.2,
            batch_size: 4,
            hidden_dim: 6,
            momentum: 0.9,
            pos_weight: true,
            seed,
        }
    }

    #[test]
    fn bce_values() {
        // near-certain correct prediction: loss ~ 0
        assert!(bce_pos_weighted(0.999999, 1, 1.0).unwrap() < 1e-5);
        // pos_weight = 1 reduces to plain BCE
        let plain = bce_pos_weighted(0.3, 1, 1.0).unwrap();
        assert!((plain + 0.3f64.ln()).abs() < 1e-12);
        // hand value: y_hat = 0.5, y = 1, p = 2 -> 2 ln 2
        let v = bce_pos_weighted(0.5, 1, 2.0).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            bce_pos_weighted(0.5, 1, 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn pos_weight_values() {
        let balanced: Vec<u8> = [0u8, 1].repeat(25);
        assert_eq!(pos_weight_for_task(&balanced).unwrap(), 1.0);
        let mut skewed = vec![0u8; 90];
        skewed.extend(vec![1u8; 10]);
        assert_eq!(pos_weight_for_task(&skewed).unwrap(), 9.0);
        assert!(matches!(
            pos_weight_for_task(&[1, 1, 1]),
            Err(Error::DegenerateTask(_))
        ));
    }

    #[test]
    fn one_epoch_single_task_log_shape() {
        let suite = tiny_suite(4);
        let mut model = ToyModel::init(suite.input_dim(), 4, 1, 4).unwrap();
        let n = suite.n_points(Split::Train);
        let mut log = TrainingDynamicsLog::in_memory(1, n).unwrap();
        train_single_task(&mut model, &suite, 0, &quick_config(1, 4), &mut log).unwrap();
        assert_eq!(log.epoch_count(), 1);
        for point in 0..n {
            assert_eq!(log.moments(0, point).count(), 1);
        }
    }

    #[test]
    fn zero_weight_isolates_head() {
        let suite = tiny_suite(8);
        let config = quick_config(3, 8);
        let mut model =
            ToyModel::init(suite.input_dim(), config.hidden_dim, suite.n_tasks(), 8).unwrap();
        let before = model.w2[1].clone();
        let before_b = model.b2[1];
        let mut log =
            TrainingDynamicsLog::in_memory(suite.n_tasks(), suite.n_points(Split::Train)).unwrap();
        let lw = LossWeights::new(0, vec![1.0, 0.0, 1.0]).unwrap();
        train(&mut model, &suite, &config, &mut log, Some(&lw)).unwrap();
        assert_eq!(model.w2[1], before);
        assert_eq!(model.b2[1], before_b);
        // other heads did move
        assert_ne!(model.b2[0], 0.0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let suite = tiny_suite(2);
        let config = quick_config(4, 2);
        let mut run = || {
            let mut model =
                ToyModel::init(suite.input_dim(), config.hidden_dim, suite.n_tasks(), 2).unwrap();
            let mut log = TrainingDynamicsLog::in_memory(
                suite.n_tasks(),
                suite.n_points(Split::Train),
            )
            .unwrap();
            train(&mut model, &suite, &config, &mut log, None).unwrap();
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn divergence_is_reported() {
        // The probability clamp keeps the loss finite under any learning
        // rate, so poison a parameter to exercise the divergence guard.
        let suite = tiny_suite(6);
        let config = quick_config(5, 6);
        let mut model =
            ToyModel::init(suite.input_dim(), config.hidden_dim, suite.n_tasks(), 6).unwrap();
        model.w1[0][0] = f64::NAN;
        let mut log =
            TrainingDynamicsLog::in_memory(suite.n_tasks(), suite.n_points(Split::Train)).unwrap();
        match train(&mut model, &suite, &config, &mut log, None) {
            Err(Error::Divergence { epoch: 1, batch: 0 }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn grad_check_healthy_and_fault_injected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let model = ToyModel::init(5, 4, 3, 77).unwrap();
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let labels: Vec<Vec<u8>> = (0..3)
            .map(|_| (0..6).map(|_| rng.random::<bool>() as u8).collect())
            .collect();
        let pos = vec![1.0, 2.0, 0.5];
        let weights = vec![1.0, 0.3, 0.7];
        let err = grad_check(&model, &inputs, &labels, &pos, &weights, 1e-5).unwrap();
        assert!(err <= 1e-4, "healthy gradient check failed: {err}");

        // fault injection: a sign-flipped analytic gradient must stand out
        let xs: Vec<&[f64]> = inputs.iter().map(|x| x.as_slice()).collect();
        let ys: Vec<&[u8]> = labels.iter().map(|r| r.as_slice()).collect();
        let mut grads = ParamBuffer::zeros_like(&model);
        batch_loss_and_grads(&model, &xs, &ys, &pos, &weights, &mut grads);
        let mut worst = 0.0f64;
        for k in 0..model.param_count() {
            let analytic = -grads.get(&model, k); // flipped
            let mut probe = model.clone();
            let original = probe.get_param(k);
            probe.set_param(k, original + 1e-5);
            let mut s = ParamBuffer::zeros_like(&model);
            let plus = batch_loss_and_grads(&probe, &xs, &ys, &pos, &weights, &mut s);
            probe.set_param(k, original - 1e-5);
            let mut s = ParamBuffer::zeros_like(&model);
            let minus = batch_loss_and_grads(&probe, &xs, &ys, &pos, &weights, &mut s);
            let numeric = (plus - minus) / 2e-5;
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        assert!(worst > 1e-2, "sign flip went unnoticed: {worst}");
    }

    #[test]
    fn grad_check_epsilon_range() {
        let model = ToyModel::init(2, 2, 1, 0).unwrap();
        let inputs = vec![vec![0.1, 0.2]];
        let labels = vec![vec![1u8]];
        assert!(matches!(
            grad_check(&model, &inputs, &labels, &[1.0], &[1.0], 1e-2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = ToyModel::init(3, 4, 2, 5).unwrap();
        model.save(&path).unwrap();
        assert_eq!(ToyModel::load(&path).unwrap(), model);
    }

    #[test]
    fn dynamics_complete_after_training() {
        let suite = tiny_suite(13);
        let config = quick_config(3, 13);
        let mut model =
            ToyModel::init(suite.input_dim(), config.hidden_dim, suite.n_tasks(), 13).unwrap();
        let mut log =
            TrainingDynamicsLog::in_memory(suite.n_tasks(), suite.n_points(Split::Train)).unwrap();
        train(&mut model, &suite, &config, &mut log, None).unwrap();
        assert_eq!(log.epoch_count(), 3);
        for task in 0..suite.n_tasks() {
            for point in 0..suite.n_points(Split::Train) {
                assert_eq!(log.moments(task, point).count(), 3);
            }
        }
    }
}
