//! Model specialization: per-cluster loss weights taken from membership
//! columns, independently trained specialist models, and inference-time
//! combination of their outputs by the same memberships.

use serde::{Deserialize, Serialize};

use crate::cluster::MembershipMatrix;
use crate::dynamics::TrainingDynamicsLog;
use crate::error::{Error, Result};
use crate::metrics::{f1, macro_f1, ConfusionCounts};
use crate::toytrain::{train, Split, SyntheticTaskSuite, ToyModel, TrainerConfig};

/// Decision threshold for turning combined probabilities into labels.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Column j of a membership matrix: the per-task weight vector W_j used as
/// loss weights when training specialist j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    cluster: usize,
    weights: Vec<f64>,
}

impl LossWeights {
    pub fn new(cluster: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Argument("empty loss-weight vector".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Argument("loss weights must lie in [0, 1]".into()));
        }
        Ok(Self { cluster, weights })
    }

    pub fn from_membership(memberships: &MembershipMatrix, cluster: usize) -> Result<Self> {
        if cluster >= memberships.m() {
            return Err(Error::Argument(format!(
                "cluster {cluster} out of range (m = {})",
                memberships.m()
            )));
        }
        Self::new(cluster, memberships.column(cluster))
    }

    pub fn cluster(&self) -> usize {
        self.cluster
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted loss WL_j = W_j . L_j, the dot product of the cluster's task
/// weights with the per-task (batch-mean) losses.
pub fn weighted_loss(weights: &LossWeights, per_task_losses: &[f64]) -> Result<f64> {
    if weights.weights.len() != per_task_losses.len() {
        return Err(Error::Argument(format!(
            "{} weights against {} losses",
            weights.weights.len(),
            per_task_losses.len()
        )));
    }
    if per_task_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Argument("per-task losses must be finite".into()));
    }
    Ok(weights
        .weights
        .iter()
        .zip(per_task_losses)
        .map(|(w, l)| w * l)
        .sum())
}

/// Membership-weighted combination of per-task model outputs:
/// result[i] = sum_j w_{i,j} * outputs[j][i].
pub fn combine_outputs(
    memberships: &MembershipMatrix,
    outputs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = memberships.n_tasks();
    let m = memberships.m();
    if outputs.len() != m {
        return Err(Error::Argument(format!(
            "{} output vectors for m = {m} clusters",
            outputs.len()
        )));
    }
    if outputs.iter().any(|o| o.len() != n) {
        return Err(Error::Argument(format!(
            "every output vector must have n = {n} entries"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, output) in outputs.iter().enumerate() {
                acc += memberships.row(i)[j] * output[i];
            }
            acc
        })
        .collect())
}

/// m specialist models plus the memberships that weight their losses and
/// combine their outputs.
#[derive(Debug, Clone)]
pub struct SpecialistEnsemble {
    pub memberships: MembershipMatrix,
    pub models: Vec<ToyModel>,
    pub seed: u64,
    pub epochs: u32,
}

impl SpecialistEnsemble {
    pub fn new(memberships: MembershipMatrix, models: Vec<ToyModel>, seed: u64, epochs: u32) -> Result<Self> {
        if models.len() != memberships.m() {
            return Err(Error::Argument(format!(
                "{} models for m = {} clusters",
                models.len(),
                memberships.m()
            )));
        }
        let n = memberships.n_tasks();
        if models.iter().any(|m| m.n_tasks != n) {
            return Err(Error::Argument(
                "every specialist must share the task count n".into(),
            ));
        }
        Ok(Self {
            memberships,
            models,
            seed,
            epochs,
        })
    }

    /// Combined per-task probabilities for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let outputs: Vec<Vec<f64>> = self.models.iter().map(|m| m.predict(x)).collect();
        combine_outputs(&self.memberships, &outputs)
    }
}

/// Trains one specialist per cluster, each with the cluster's membership
/// column as loss weights. All specialists share the seed, splits, and
/// hyperparameters, so differences come only from the weights.
pub fn train_specialists(
    memberships: &MembershipMatrix,
    suite: &SyntheticTaskSuite,
    config: &TrainerConfig,
) -> Result<SpecialistEnsemble> {
    if memberships.n_tasks() != suite.n_tasks() {
        return Err(Error::Argument(format!(
            "memberships cover {} tasks, suite defines {}",
            memberships.n_tasks(),
            suite.n_tasks()
        )));
    }
    let mut models = Vec::with_capacity(memberships.m());
    for cluster in 0..memberships.m() {
        let weights = LossWeights::from_membership(memberships, cluster)?;
        let mut model = ToyModel::init(
            suite.input_dim(),
            config.hidden_dim,
            suite.n_tasks(),
            config.seed,
        )?;
        let mut log =
            TrainingDynamicsLog::in_memory(suite.n_tasks(), suite.n_points(Split::Train))?;
        train(&mut model, suite, config, &mut log, Some(&weights))?;
        models.push(model);
    }
    SpecialistEnsemble::new(memberships.clone(), models, config.seed, config.epochs)
}

/// Per-task F1 plus the unweighted macro average on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub per_task: Vec<f64>,
    pub macro_f1: f64,
}

fn evaluate_predictions<F>(
    suite: &SyntheticTaskSuite,
    split: Split,
    mut predict: F,
) -> Result<EvalReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let inputs = suite.inputs(split);
    if inputs.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    let n = suite.n_tasks();
    let mut counts = vec![ConfusionCounts::default(); n];
    for (i, x) in inputs.iter().enumerate() {
        let probs = predict(x)?;
        for task in 0..n {
            let predicted = probs[task] >= DECISION_THRESHOLD;
            let actual = suite.labels(split, task)[i] == 1;
            counts[task].observe(predicted, actual);
        }
    }
    let per_task: Vec<f64> = counts.iter().map(f1).collect::<Result<_>>()?;
    let macro_f1 = macro_f1(&per_task)?;
    Ok(EvalReport {
        split,
        per_task,
        macro_f1,
    })
}

/// Evaluates the ensemble: combined outputs, threshold 0.5, per-task F1
/// and unweighted macro F1.
pub fn evaluate_ensemble(
    ensemble: &SpecialistEnsemble,
    suite: &SyntheticTaskSuite,
    split: Split,
) -> Result<EvalReport> {
    evaluate_predictions(suite, split, |x| ensemble.predict(x))
}

/// Same evaluation for a bare multi-head model (the plain MTL baseline).
pub fn evaluate_model(
    model: &ToyModel,
    suite: &SyntheticTaskSuite,
    split: Split,
) -> Result<EvalReport> {
    evaluate_predictions(suite, split, |x| Ok(model.predict(x)))
}
