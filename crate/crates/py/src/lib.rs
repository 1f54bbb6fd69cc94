//! Python bindings for the stg pipeline: dynamics logs, data-map tensors,
//! k-means + fuzzified memberships, the toy trainer, and specialist
//! ensembles. Thin wrappers over `stg_core`; see `python/smoke_test.py`
//! for an end-to-end walkthrough.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stg_core::cluster::{self, MembershipMatrix, TaskVector};
use stg_core::datamap::{self, DataMapTensor, SnapshotSchedule};
use stg_core::dynamics::TrainingDynamicsLog;
use stg_core::error::Error;
use stg_core::metrics::{self, ConfusionCounts};
use stg_core::specialize::{self, LossWeights, SpecialistEnsemble};
use stg_core::toytrain::{self, Split, SuiteSpec, SyntheticTaskSuite, ToyModel, TrainerConfig};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(inner) => PyIOError::new_err(inner.to_string()),
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!(
            "split must be 'train' or 'test', got {other:?}"
        ))),
    }
}

fn to_task_vectors(vectors: Vec<Vec<f64>>) -> Vec<TaskVector> {
    vectors
        .into_iter()
        .enumerate()
        .map(|(task, values)| TaskVector { task, values })
        .collect()
}

/// Append-only training-dynamics log with streaming moments.
#[pyclass(name = "DynamicsLog")]
struct PyDynamicsLog {
    inner: TrainingDynamicsLog,
}

#[pymethods]
impl PyDynamicsLog {
    #[new]
    #[pyo3(signature = (n_tasks, n_points, path=None))]
    fn new(n_tasks: usize, n_points: usize, path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(path) => TrainingDynamicsLog::create(n_tasks, n_points, path),
            None => TrainingDynamicsLog::in_memory(n_tasks, n_points),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: TrainingDynamicsLog::load(path).map_err(err)?,
        })
    }

    fn record(&mut self, epoch: u32, task: usize, point: usize, p_true: f64) -> PyResult<()> {
        self.inner.record(epoch, task, point, p_true).map_err(err)
    }

    fn flush(&mut self) -> PyResult<()> {
        self.inner.flush().map_err(err)
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points()
    }

    #[getter]
    fn epoch_count(&self) -> u32 {
        self.inner.epoch_count()
    }

    /// (count, mean, population_std) accumulated for (task, point).
    fn moments(&self, task: usize, point: usize) -> (u64, f64, f64) {
        let m = self.inner.moments(task, point);
        (m.count(), m.mean(), m.population_std())
    }
}

/// Complete (task, snapshot) grid of data maps.
#[pyclass(name = "DataMapTensor")]
struct PyDataMapTensor {
    inner: DataMapTensor,
}

#[pymethods]
impl PyDataMapTensor {
    /// Data maps of `log` at the given snapshot epochs (cumulative from
    /// epoch 1).
    #[staticmethod]
    fn compute(log: &PyDynamicsLog, epochs: Vec<u32>) -> PyResult<Self> {
        let schedule = SnapshotSchedule::new(epochs).map_err(err)?;
        Ok(Self {
            inner: datamap::compute_tensor(&log.inner, &schedule).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DataMapTensor::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points()
    }

    #[getter]
    fn epochs(&self) -> Vec<u32> {
        self.inner.schedule().epochs().to_vec()
    }

    fn mu(&self, task: usize, snapshot: usize) -> Vec<f64> {
        self.inner.map(task, snapshot).mu.clone()
    }

    fn sigma(&self, task: usize, snapshot: usize) -> Vec<f64> {
        self.inner.map(task, snapshot).sigma.clone()
    }

    /// Flattened per-task clustering features (snapshot-major, mu before
    /// sigma per point).
    fn task_vectors(&self) -> Vec<Vec<f64>> {
        cluster::build_task_vectors(&self.inner)
            .into_iter()
            .map(|v| v.values)
            .collect()
    }
}

/// Merges single-task tensors (task_index, tensor) into one grid.
#[pyfunction]
fn merge_stl_maps(parts: Vec<(usize, PyRef<PyDataMapTensor>)>) -> PyResult<PyDataMapTensor> {
    let parts = parts
        .into_iter()
        .map(|(task, tensor)| (task, tensor.inner.clone()))
        .collect();
    Ok(PyDataMapTensor {
        inner: datamap::merge_stl_maps(parts).map_err(err)?,
    })
}

/// Crisp k-means result: centroids plus run bookkeeping.
#[pyclass(name = "ClusterModel")]
struct PyClusterModel {
    inner: cluster::ClusterModel,
}

#[pymethods]
impl PyClusterModel {
    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        self.inner.centroids.clone()
    }

    #[getter]
    fn inertia(&self) -> f64 {
        self.inner.inertia
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn inertia_history(&self) -> Vec<f64> {
        self.inner.inertia_history.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Best-of-restarts Lloyd k-means with k-means++ seeding.
#[pyfunction]
#[pyo3(signature = (vectors, m, seed, max_iter=300, tol=1e-6))]
fn kmeans(
    vectors: Vec<Vec<f64>>,
    m: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> PyResult<PyClusterModel> {
    Ok(PyClusterModel {
        inner: cluster::kmeans(&to_task_vectors(vectors), m, seed, max_iter, tol).map_err(err)?,
    })
}

/// Row-stochastic task-to-cluster weights.
#[pyclass(name = "MembershipMatrix")]
struct PyMembershipMatrix {
    inner: MembershipMatrix,
}

#[pymethods]
impl PyMembershipMatrix {
    #[new]
    #[pyo3(signature = (weights, fuzzification=None))]
    fn new(weights: Vec<Vec<f64>>, fuzzification: Option<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: MembershipMatrix::new(weights, fuzzification).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: MembershipMatrix::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn fuzzification(&self) -> Option<f64> {
        self.inner.fuzzification()
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    fn harden(&self) -> Self {
        Self {
            inner: cluster::harden(&self.inner),
        }
    }

    fn hard_assignment(&self) -> Vec<usize> {
        self.inner.hard_assignment()
    }

    /// Column j: the per-task loss-weight vector of cluster j.
    fn column(&self, cluster: usize) -> Vec<f64> {
        self.inner.column(cluster)
    }
}

/// Soft memberships via the normalized-power fuzzification form.
#[pyfunction]
fn fuzzify(
    vectors: Vec<Vec<f64>>,
    model: &PyClusterModel,
    f: f64,
) -> PyResult<PyMembershipMatrix> {
    Ok(PyMembershipMatrix {
        inner: cluster::fuzzify(&to_task_vectors(vectors), &model.inner, f).map_err(err)?,
    })
}

/// Reference ratio-form fuzzification, kept as an independent oracle.
#[pyfunction]
fn eq1_reference(
    vectors: Vec<Vec<f64>>,
    model: &PyClusterModel,
    f: f64,
) -> PyResult<PyMembershipMatrix> {
    Ok(PyMembershipMatrix {
        inner: cluster::eq1_reference(&to_task_vectors(vectors), &model.inner, f).map_err(err)?,
    })
}

/// WL_j = W_j . L_j for one cluster's weight column.
#[pyfunction]
fn weighted_loss(weights: Vec<f64>, per_task_losses: Vec<f64>) -> PyResult<f64> {
    let w = LossWeights::new(0, weights).map_err(err)?;
    specialize::weighted_loss(&w, &per_task_losses).map_err(err)
}

/// Membership-weighted combination of per-task model outputs.
#[pyfunction]
fn combine_outputs(
    memberships: &PyMembershipMatrix,
    outputs: Vec<Vec<f64>>,
) -> PyResult<Vec<f64>> {
    specialize::combine_outputs(&memberships.inner, &outputs).map_err(err)
}

/// Seeded synthetic task suite (Gaussian mixture + binary tasks).
#[pyclass(name = "Suite")]
struct PySuite {
    inner: SyntheticTaskSuite,
}

#[pymethods]
impl PySuite {
    /// Builds a suite from a spec file (stg-suite/1 JSON).
    #[staticmethod]
    fn from_spec(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SuiteSpec::load(path).and_then(|s| s.build()).map_err(err)?,
        })
    }

    /// Builds a suite from spec JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: SuiteSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            inner: spec.build().map_err(err)?,
        })
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn n_points(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.n_points(parse_split(split)?))
    }

    fn inputs(&self, split: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.inputs(parse_split(split)?).to_vec())
    }

    fn labels(&self, split: &str, task: usize) -> PyResult<Vec<u8>> {
        if task >= self.inner.n_tasks() {
            return Err(PyValueError::new_err(format!("task {task} out of range")));
        }
        Ok(self.inner.labels(parse_split(split)?, task).to_vec())
    }
}

fn trainer_config(
    model: &ToyModel,
    epochs: u32,
    learning_rate: f64,
    batch_size: usize,
    momentum: f64,
    pos_weight: bool,
    seed: u64,
) -> TrainerConfig {
    TrainerConfig {
        epochs,
        learning_rate,
        batch_size,
        hidden_dim: model.hidden_dim,
        momentum,
        pos_weight,
        seed,
    }
}

/// Shared-encoder multi-head model with manual gradients.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ToyModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(input_dim: usize, hidden_dim: usize, n_tasks: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: ToyModel::init(input_dim, hidden_dim, n_tasks, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ToyModel::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn n_tasks(&self) -> usize {
        self.inner.n_tasks
    }

    /// Per-task probabilities for one input row.
    fn predict(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.predict(&x)
    }

    /// Joint training over all suite tasks, logging dynamics per epoch.
    /// `loss_weights` scales each task's batch-mean loss.
    #[pyo3(signature = (suite, log, epochs=50, learning_rate=0.3, batch_size=32,
                        momentum=0.9, pos_weight=true, seed=0, loss_weights=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        suite: &PySuite,
        log: &mut PyDynamicsLog,
        epochs: u32,
        learning_rate: f64,
        batch_size: usize,
        momentum: f64,
        pos_weight: bool,
        seed: u64,
        loss_weights: Option<Vec<f64>>,
    ) -> PyResult<()> {
        let config = trainer_config(
            &self.inner,
            epochs,
            learning_rate,
            batch_size,
            momentum,
            pos_weight,
            seed,
        );
        let weights = loss_weights
            .map(|w| LossWeights::new(0, w))
            .transpose()
            .map_err(err)?;
        toytrain::train(
            &mut self.inner,
            &suite.inner,
            &config,
            &mut log.inner,
            weights.as_ref(),
        )
        .map_err(err)
    }

    /// Evaluates this model alone: (per_task_f1, macro_f1) on the split.
    fn evaluate(&self, suite: &PySuite, split: &str) -> PyResult<(Vec<f64>, f64)> {
        let report = specialize::evaluate_model(&self.inner, &suite.inner, parse_split(split)?)
            .map_err(err)?;
        Ok((report.per_task, report.macro_f1))
    }

    /// Largest relative error between analytic gradients and central
    /// finite differences on one batch.
    #[pyo3(signature = (inputs, labels, pos_weights, task_weights, epsilon=1e-5))]
    fn grad_check(
        &self,
        inputs: Vec<Vec<f64>>,
        labels: Vec<Vec<u8>>,
        pos_weights: Vec<f64>,
        task_weights: Vec<f64>,
        epsilon: f64,
    ) -> PyResult<f64> {
        toytrain::grad_check(
            &self.inner,
            &inputs,
            &labels,
            &pos_weights,
            &task_weights,
            epsilon,
        )
        .map_err(err)
    }
}

/// m specialist models combined by their membership weights.
#[pyclass(name = "Ensemble")]
struct PyEnsemble {
    inner: SpecialistEnsemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn m(&self) -> usize {
        self.inner.models.len()
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict(&x).map_err(err)
    }

    /// (per_task_f1, macro_f1) of the combined outputs on the split.
    fn evaluate(&self, suite: &PySuite, split: &str) -> PyResult<(Vec<f64>, f64)> {
        let report =
            specialize::evaluate_ensemble(&self.inner, &suite.inner, parse_split(split)?)
                .map_err(err)?;
        Ok((report.per_task, report.macro_f1))
    }
}

/// Trains one specialist per cluster with the membership columns as loss
/// weights; all specialists share the seed and splits.
#[pyfunction]
#[pyo3(signature = (memberships, suite, hidden_dim, epochs=50, learning_rate=0.3,
                    batch_size=32, momentum=0.9, pos_weight=true, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_specialists(
    memberships: &PyMembershipMatrix,
    suite: &PySuite,
    hidden_dim: usize,
    epochs: u32,
    learning_rate: f64,
    batch_size: usize,
    momentum: f64,
    pos_weight: bool,
    seed: u64,
) -> PyResult<PyEnsemble> {
    let config = TrainerConfig {
        epochs,
        learning_rate,
        batch_size,
        hidden_dim,
        momentum,
        pos_weight,
        seed,
    };
    Ok(PyEnsemble {
        inner: specialize::train_specialists(&memberships.inner, &suite.inner, &config)
            .map_err(err)?,
    })
}

/// F1 = 2tp / (2tp + fp + fn).
#[pyfunction(name = "f1")]
fn f1_py(tp: u64, fp: u64, fn_: u64, tn: u64) -> PyResult<f64> {
    metrics::f1(&ConfusionCounts { tp, fp, fn_, tn }).map_err(err)
}

/// Unweighted mean of per-task F1 scores.
#[pyfunction]
fn macro_f1(per_task: Vec<f64>) -> PyResult<f64> {
    metrics::macro_f1(&per_task).map_err(err)
}

/// Fraction of tasks whose hardened cluster maps onto their true group
/// under the best one-to-one cluster/group matching.
#[pyfunction]
fn grouping_agreement(
    memberships: &PyMembershipMatrix,
    truth: Vec<usize>,
) -> PyResult<(f64, Vec<(usize, usize)>)> {
    let report = metrics::grouping_agreement(&memberships.inner, &truth).map_err(err)?;
    Ok((report.agreement, report.matching))
}

/// Positive-weighted binary cross entropy.
#[pyfunction]
fn bce_pos_weighted(y_hat: f64, y: u8, pos_weight: f64) -> PyResult<f64> {
    toytrain::bce_pos_weighted(y_hat, y, pos_weight).map_err(err)
}

/// (#negatives / #positives) on a label vector.
#[pyfunction]
fn pos_weight_for_task(labels: Vec<u8>) -> PyResult<f64> {
    toytrain::pos_weight_for_task(&labels).map_err(err)
}

#[pymodule]
fn stg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDynamicsLog>()?;
    m.add_class::<PyDataMapTensor>()?;
    m.add_class::<PyClusterModel>()?;
    m.add_class::<PyMembershipMatrix>()?;
    m.add_class::<PySuite>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(merge_stl_maps, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(fuzzify, m)?)?;
    m.add_function(wrap_pyfunction!(eq1_reference, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combine_outputs, m)?)?;
    m.add_function(wrap_pyfunction!(train_specialists, m)?)?;
    m.add_function(wrap_pyfunction!(f1_py, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(grouping_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(bce_pos_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(pos_weight_for_task, m)?)?;
    Ok(())
}
