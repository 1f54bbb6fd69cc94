//! Task clustering: flatten data maps into per-task feature vectors, run
//! seeded k-means (k-means++ init, Lloyd iterations), and turn the crisp
//! centroids into soft memberships via the inverse-distance fuzzification
//! rule with index F.
//!
//! Two algebraically equivalent membership routes are kept side by side:
//! [`fuzzify`] computes the normalized-power form, [`eq1_reference`] the
//! ratio form. They agree wherever all distances are positive, which the
//! tests assert; zero distance makes both split membership uniformly over
//! the coincident centroids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamap::DataMapTensor;
use crate::error::{Error, Result};

pub const MEMBERSHIP_FORMAT: &str = "stg-memb/1";

/// Default fuzzification index.
pub const DEFAULT_F: f64 = 2.0;
/// Default convergence tolerance on max centroid displacement.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default Lloyd iteration cap.
pub const DEFAULT_MAX_ITER: usize = 300;
/// k-means++ restarts per call; the lowest-inertia run wins. Sub-seeds are
/// derived deterministically from the caller's seed.
const KMEANS_RESTARTS: u64 = 10;

/// One task's clustering feature: its data-map snapshots flattened in
/// schedule order, each snapshot contributing (mu, sigma) per point in
/// canonical point order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub task: usize,
    pub values: Vec<f64>,
}

/// Flattens the tensor into n task vectors of length e*N*2, identical
/// layout for every task: snapshot-major, point-major, mu before sigma.
pub fn build_task_vectors(tensor: &DataMapTensor) -> Vec<TaskVector> {
    let e = tensor.schedule().len();
    let n_points = tensor.n_points();
    (0..tensor.n_tasks())
        .map(|task| {
            let mut values = Vec::with_capacity(e * n_points * 2);
            for s in 0..e {
                let map = tensor.map(task, s);
                for i in 0..n_points {
                    values.push(map.mu[i]);
                    values.push(map.sigma[i]);
                }
            }
            TaskVector { task, values }
        })
        .collect()
}

/// Optional per-dimension standardization across tasks (zero mean, unit
/// variance; constant dimensions collapse to 0). Off by default since mu
/// and sigma are already commensurate.
pub fn normalize_task_vectors(vectors: &[TaskVector]) -> Vec<TaskVector> {
    if vectors.is_empty() {
        return Vec::new();
    }
    let dim = vectors[0].values.len();
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (acc, &x) in mean.iter_mut().zip(&v.values) {
            *acc += x / n;
        }
    }
    let mut std = vec![0.0; dim];
    for v in vectors {
        for (acc, (&x, &mu)) in std.iter_mut().zip(v.values.iter().zip(&mean)) {
            *acc += (x - mu) * (x - mu) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
    }
    vectors
        .iter()
        .map(|v| TaskVector {
            task: v.task,
            values: v
                .values
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(&x, (&mu, &s))| if s > 0.0 { (x - mu) / s } else { 0.0 })
                .collect(),
        })
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Crisp k-means result: m centroids plus the bookkeeping needed to audit
/// the run (inertia per Lloyd iteration, seed, iteration count).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub m: usize,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each assignment step, starting with the one that
    /// follows seeding. Non-increasing on every run.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    /// Index and distance of the nearest centroid; ties go to the lowest
    /// cluster index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let mut best = (0, euclidean(v, &self.centroids[0]));
        for (j, c) in self.centroids.iter().enumerate().skip(1) {
            let d = euclidean(v, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    /// Nearest-centroid assignment for each vector.
    pub fn assign(&self, vectors: &[TaskVector]) -> Vec<usize> {
        vectors.iter().map(|v| self.nearest(&v.values).0).collect()
    }
}

fn nearest_sq(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, each next one drawn with
/// probability proportional to squared distance from the chosen set.
fn kmeans_pp(data: &[&[f64]], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![data[first].to_vec()];

    while centroids.len() < m {
        let d2: Vec<f64> = data.iter().map(|p| nearest_sq(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                r -= w;
                if r <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with a centroid; take the first
            // index not already used so m centroids still come out.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(data[pick].to_vec());
    }
    centroids
}

fn assign_all(data: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    data.iter().map(|p| nearest_sq(p, centroids).0).collect()
}

fn cost(data: &[&[f64]], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    data.iter()
        .zip(assignment)
        .map(|(p, &j)| squared_distance(p, &centroids[j]))
        .sum()
}

/// Moves each empty centroid onto the point currently farthest from its
/// assigned centroid, keeping all m clusters alive. Never increases cost.
fn reseed_empty(data: &[&[f64]], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let m = centroids.len();
    loop {
        let mut counts = vec![0usize; m];
        for &j in assignment.iter() {
            counts[j] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = 0usize;
        let mut far_d = -1.0f64;
        for (i, p) in data.iter().enumerate() {
            let d = squared_distance(p, &centroids[assignment[i]]);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        centroids[empty] = data[far].to_vec();
        assignment[far] = empty;
    }
}

/// Lloyd's k-means over task vectors: the best of several k-means++
/// restarts, sub-seeded from `seed`.
///
/// Each restart runs until the maximum centroid displacement drops below
/// `tol` or `max_iter` update rounds have happened; the lowest-inertia run
/// is returned. The returned assignment is a fixed point: every vector
/// sits with its nearest returned centroid.
pub fn kmeans(
    vectors: &[TaskVector],
    m: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let n = vectors.len();
    if m == 0 {
        return Err(Error::Argument("cluster count m must be at least 1".into()));
    }
    if m > n {
        return Err(Error::Argument(format!(
            "cluster count m = {m} exceeds the number of task vectors {n}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::Argument("max_iter must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Argument("tol must be non-negative".into()));
    }
    let dim = vectors[0].values.len();
    if vectors.iter().any(|v| v.values.len() != dim) {
        return Err(Error::Argument(
            "task vectors differ in length".into(),
        ));
    }

    let mut best: Option<ClusterModel> = None;
    for restart in 0..KMEANS_RESTARTS {
        let run = lloyd_run(vectors, m, seed, restart, max_iter, tol);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd_run(
    vectors: &[TaskVector],
    m: usize,
    seed: u64,
    restart: u64,
    max_iter: usize,
    tol: f64,
) -> ClusterModel {
    let dim = vectors[0].values.len();
    let data: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    let mut centroids = kmeans_pp(&data, m, &mut rng);
    let mut assignment = assign_all(&data, &centroids);
    reseed_empty(&data, &mut centroids, &mut assignment);
    let mut inertia_history = vec![cost(&data, &centroids, &assignment)];

    let mut iterations_run = 0;
    while iterations_run < max_iter {
        // Update step: each centroid moves to the mean of its members.
        let mut sums = vec![vec![0.0; dim]; m];
        let mut counts = vec![0usize; m];
        for (p, &j) in data.iter().zip(&assignment) {
            counts[j] += 1;
            for (acc, &x) in sums[j].iter_mut().zip(p.iter()) {
                *acc += x;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..m {
            debug_assert!(counts[j] > 0, "reseed keeps every cluster non-empty");
            for x in sums[j].iter_mut() {
                *x /= counts[j] as f64;
            }
            shift = shift.max(euclidean(&sums[j], &centroids[j]));
            centroids[j] = std::mem::take(&mut sums[j]);
        }

        assignment = assign_all(&data, &centroids);
        reseed_empty(&data, &mut centroids, &mut assignment);
        inertia_history.push(cost(&data, &centroids, &assignment));
        iterations_run += 1;

        if shift < tol {
            break;
        }
    }

    ClusterModel {
        m,
        centroids,
        inertia: *inertia_history.last().expect("history is non-empty"),
        seed,
        iterations_run,
        inertia_history,
    }
}

/// Row-stochastic n-by-m matrix of task-to-cluster weights.
///
/// Soft matrices carry the fuzzification index they were produced with;
/// hard matrices have `fuzzification = None` and exactly one 1 per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    weights: Vec<Vec<f64>>,
    fuzzification: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MembershipFile {
    format: String,
    n_tasks: usize,
    m: usize,
    #[serde(rename = "F")]
    fuzzification: Option<f64>,
    weights: Vec<Vec<f64>>,
}

impl MembershipMatrix {
    pub fn new(weights: Vec<Vec<f64>>, fuzzification: Option<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Argument("membership matrix has no rows".into()));
        }
        let m = weights[0].len();
        if m == 0 {
            return Err(Error::Argument("membership matrix has no columns".into()));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Argument(format!(
                    "membership row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            if row.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Argument(format!(
                    "membership row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!(
                    "membership row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self {
            weights,
            fuzzification,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.weights.len()
    }

    pub fn m(&self) -> usize {
        self.weights[0].len()
    }

    pub fn fuzzification(&self) -> Option<f64> {
        self.fuzzification
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn row(&self, task: usize) -> &[f64] {
        &self.weights[task]
    }

    /// Column j: the per-task weight vector W_j of cluster j.
    pub fn column(&self, cluster: usize) -> Vec<f64> {
        self.weights.iter().map(|row| row[cluster]).collect()
    }

    pub fn is_hard(&self) -> bool {
        self.fuzzification.is_none()
            && self
                .weights
                .iter()
                .all(|row| row.iter().filter(|&&w| w == 1.0).count() == 1)
    }

    /// Cluster index per task under hard assignment (row argmax, ties to
    /// the lowest cluster index).
    pub fn hard_assignment(&self) -> Vec<usize> {
        self.weights.iter().map(|row| argmax(row)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = MembershipFile {
            format: MEMBERSHIP_FORMAT.to_string(),
            n_tasks: self.n_tasks(),
            m: self.m(),
            fuzzification: self.fuzzification,
            weights: self.weights.clone(),
        };
        let mut writer = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut writer, &file)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let file: MembershipFile = serde_json::from_reader(reader)?;
        if file.format != MEMBERSHIP_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported format {:?}, expected {:?}",
                file.format, MEMBERSHIP_FORMAT
            )));
        }
        if file.weights.len() != file.n_tasks {
            return Err(Error::Schema(format!(
                "membership file lists {} rows, header says {}",
                file.weights.len(),
                file.n_tasks
            )));
        }
        if file.weights.iter().any(|row| row.len() != file.m) {
            return Err(Error::Schema("membership row width differs from m".into()));
        }
        Self::new(file.weights, file.fuzzification)
            .map_err(|e| Error::Schema(format!("invalid membership matrix: {e}")))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &w) in row.iter().enumerate().skip(1) {
        if w > row[best] {
            best = j;
        }
    }
    best
}

fn distances_to_centroids(v: &[f64], model: &ClusterModel) -> Vec<f64> {
    model.centroids.iter().map(|c| euclidean(v, c)).collect()
}

fn uniform_over_zero_set(distances: &[f64]) -> Option<Vec<f64>> {
    let zeros: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0)
        .map(|(j, _)| j)
        .collect();
    if zeros.is_empty() {
        return None;
    }
    let mut row = vec![0.0; distances.len()];
    let share = 1.0 / zeros.len() as f64;
    for j in zeros {
        row[j] = share;
    }
    Some(row)
}

fn check_fuzzify_args(vectors: &[TaskVector], model: &ClusterModel, f: f64) -> Result<()> {
    if !(f > 1.0) {
        return Err(Error::Argument(format!(
            "fuzzification index F must exceed 1, got {f}"
        )));
    }
    if vectors.is_empty() {
        return Err(Error::Argument("no task vectors given".into()));
    }
    let dim = model.centroids[0].len();
    if vectors.iter().any(|v| v.values.len() != dim) {
        return Err(Error::Argument(
            "task vector length differs from centroid length".into(),
        ));
    }
    Ok(())
}

/// Soft memberships from the normalized-power form
/// w_{i,j} = d_{ij}^{-2/(F-1)} / sum_k d_{ik}^{-2/(F-1)}, summed over the m
/// centroids. Evaluated in log space so extreme F stays finite.
pub fn fuzzify(vectors: &[TaskVector], model: &ClusterModel, f: f64) -> Result<MembershipMatrix> {
    check_fuzzify_args(vectors, model, f)?;
    let exponent = -2.0 / (f - 1.0);
    let weights = vectors
        .iter()
        .map(|v| {
            let d = distances_to_centroids(&v.values, model);
            if let Some(row) = uniform_over_zero_set(&d) {
                return row;
            }
            let logs: Vec<f64> = d.iter().map(|&dj| exponent * dj.ln()).collect();
            let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let terms: Vec<f64> = logs.iter().map(|&l| (l - peak).exp()).collect();
            let total: f64 = terms.iter().sum();
            terms.iter().map(|t| t / total).collect()
        })
        .collect();
    MembershipMatrix::new(weights, Some(f))
}

/// Independent reference route: the ratio form
/// w_{i,j} = 1 / sum_k (d_{ij} / d_{ik})^{2/(F-1)}, summed over the m
/// centroids. Kept unrewritten as an oracle for [`fuzzify`].
pub fn eq1_reference(
    vectors: &[TaskVector],
    model: &ClusterModel,
    f: f64,
) -> Result<MembershipMatrix> {
    check_fuzzify_args(vectors, model, f)?;
    let exponent = 2.0 / (f - 1.0);
    let weights = vectors
        .iter()
        .map(|v| {
            let d = distances_to_centroids(&v.values, model);
            if let Some(row) = uniform_over_zero_set(&d) {
                return row;
            }
            d.iter()
                .map(|&dj| {
                    let denom: f64 = d.iter().map(|&dk| (dj / dk).powf(exponent)).sum();
                    1.0 / denom
                })
                .collect()
        })
        .collect();
    MembershipMatrix::new(weights, Some(f))
}

/// Hard memberships: per row, 1 at the largest weight (ties to the lowest
/// cluster index), 0 elsewhere. Idempotent on already-hard rows.
pub fn harden(memberships: &MembershipMatrix) -> MembershipMatrix {
    let weights = memberships
        .weights
        .iter()
        .map(|row| {
            let mut hard = vec![0.0; row.len()];
            hard[argmax(row)] = 1.0;
            hard
        })
        .collect();
    MembershipMatrix {
        weights,
        fuzzification: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamap::{compute_tensor, SnapshotSchedule};
    use crate::dynamics::TrainingDynamicsLog;
    use proptest::prelude::*;

    fn tv(task: usize, values: &[f64]) -> TaskVector {
        TaskVector {
            task,
            values: values.to_vec(),
        }
    }

    fn scalar_model(centroids: &[f64]) -> ClusterModel {
        ClusterModel {
            m: centroids.len(),
            centroids: centroids.iter().map(|&c| vec![c]).collect(),
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: vec![0.0],
        }
    }

    #[test]
    fn task_vector_layout() {
        // e = 1, N = 2: [mu_0, sigma_0, mu_1, sigma_1]
        let mut log = TrainingDynamicsLog::in_memory(2, 2).unwrap();
        for e in 1..=2u32 {
            for t in 0..2 {
                for i in 0..2 {
                    let p = if e == 1 { 0.2 } else { 0.8 };
                    log.record(e, t, i, p + 0.1 * i as f64).unwrap();
                }
            }
        }
        let tensor = compute_tensor(&log, &SnapshotSchedule::new(vec![2]).unwrap()).unwrap();
        let vectors = build_task_vectors(&tensor);
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].values.len(), 4);
        let map = tensor.map(0, 0);
        assert_eq!(
            vectors[0].values,
            vec![map.mu[0], map.sigma[0], map.mu[1], map.sigma[1]]
        );
        // identical dynamics => identical vectors
        assert_eq!(vectors[0].values, vectors[1].values);
    }

    #[test]
    fn task_vector_snapshot_major() {
        // e = 2, N = 1: snapshot-1 pair before snapshot-2 pair
        let mut log = TrainingDynamicsLog::in_memory(1, 1).unwrap();
        log.record(1, 0, 0, 0.2).unwrap();
        log.record(2, 0, 0, 0.8).unwrap();
        let tensor = compute_tensor(&log, &SnapshotSchedule::new(vec![1, 2]).unwrap()).unwrap();
        let vectors = build_task_vectors(&tensor);
        assert_eq!(vectors[0].values.len(), 4);
        for (got, want) in vectors[0].values.iter().zip([0.2, 0.0, 0.5, 0.3]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_two_separated_groups() {
        let vectors = vec![
            tv(0, &[0.0, 0.0]),
            tv(1, &[0.1, 0.0]),
            tv(2, &[10.0, 0.0]),
            tv(3, &[10.1, 0.0]),
        ];
        let model = kmeans(&vectors, 2, 7, 100, 1e-9).unwrap();
        let mut firsts: Vec<f64> = model.centroids.iter().map(|c| c[0]).collect();
        firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((firsts[0] - 0.05).abs() < 1e-12);
        assert!((firsts[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn kmeans_m_equals_n() {
        let vectors = vec![tv(0, &[0.0]), tv(1, &[1.0]), tv(2, &[2.0])];
        let model = kmeans(&vectors, 3, 3, 100, 1e-9).unwrap();
        assert!(model.inertia == 0.0);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let vectors = vec![tv(0, &[1.0, 2.0]), tv(1, &[3.0, 6.0])];
        let model = kmeans(&vectors, 1, 0, 100, 1e-9).unwrap();
        assert_eq!(model.centroids[0], vec![2.0, 4.0]);
    }

    #[test]
    fn kmeans_argument_errors() {
        let vectors = vec![tv(0, &[0.0]), tv(1, &[1.0])];
        assert!(matches!(
            kmeans(&vectors, 3, 0, 100, 1e-6),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            kmeans(&vectors, 0, 0, 100, 1e-6),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn kmeans_deterministic_given_seed() {
        let vectors: Vec<TaskVector> = (0..7)
            .map(|i| tv(i, &[(i as f64 * 1.37) % 3.0, (i as f64 * 0.71) % 2.0]))
            .collect();
        let a = kmeans(&vectors, 3, 42, 300, 1e-6).unwrap();
        let b = kmeans(&vectors, 3, 42, 300, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fuzzify_hand_value() {
        // x = 0, centroids {1, 3}, F = 2: w = (0.9, 0.1)
        let vectors = vec![tv(0, &[0.0])];
        let model = scalar_model(&[1.0, 3.0]);
        for route in [fuzzify, eq1_reference] {
            let mm = route(&vectors, &model, 2.0).unwrap();
            assert!((mm.row(0)[0] - 0.9).abs() < 1e-12);
            assert!((mm.row(0)[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn fuzzify_equidistant_and_zero_distance() {
        let model = scalar_model(&[-1.0, 1.0]);
        let mm = fuzzify(&[tv(0, &[0.0])], &model, 2.0).unwrap();
        assert_eq!(mm.row(0), &[0.5, 0.5]);

        let model3 = scalar_model(&[5.0, 1.0, 9.0]);
        for route in [fuzzify, eq1_reference] {
            let mm = route(&[tv(0, &[5.0])], &model3, 2.0).unwrap();
            assert_eq!(mm.row(0), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn fuzzify_rejects_bad_f() {
        let model = scalar_model(&[0.0]);
        assert!(matches!(
            fuzzify(&[tv(0, &[1.0])], &model, 1.0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            eq1_reference(&[tv(0, &[1.0])], &model, 0.5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn harden_rules() {
        let mm = MembershipMatrix::new(
            vec![vec![0.9, 0.1], vec![0.5, 0.5], vec![0.0, 1.0]],
            Some(2.0),
        )
        .unwrap();
        let hard = harden(&mm);
        assert_eq!(hard.row(0), &[1.0, 0.0]);
        assert_eq!(hard.row(1), &[1.0, 0.0]); // tie -> lowest index
        assert_eq!(hard.row(2), &[0.0, 1.0]);
        assert!(hard.is_hard());
        assert_eq!(harden(&hard), hard); // idempotent
    }

    #[test]
    fn membership_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memb.json");
        let mm = MembershipMatrix::new(vec![vec![0.25, 0.75], vec![1.0, 0.0]], Some(2.0)).unwrap();
        mm.save(&path).unwrap();
        assert_eq!(MembershipMatrix::load(&path).unwrap(), mm);
    }

    #[test]
    fn limit_behavior_near_one_and_large_f() {
        let vectors = vec![tv(0, &[0.2, 0.0]), tv(1, &[0.9, 0.3])];
        let model = ClusterModel {
            m: 3,
            centroids: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.5]],
            inertia: 0.0,
            seed: 0,
            iterations_run: 0,
            inertia_history: vec![0.0],
        };
        let near_hard = fuzzify(&vectors, &model, 1.0001).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            let nearest = model.nearest(&v.values).0;
            for j in 0..3 {
                let want = if j == nearest { 1.0 } else { 0.0 };
                assert!((near_hard.row(i)[j] - want).abs() < 1e-3);
            }
        }
        // At F = 100 the residual spread is ~(2/99)ln(d_j/d_k), so probe
        // near the circumcenter where distance ratios stay close to 1.
        let near_center = vec![tv(0, &[0.52, 0.01]), tv(1, &[0.48, -0.02])];
        let near_uniform = fuzzify(&near_center, &model, 100.0).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((near_uniform.row(i)[j] - 1.0 / 3.0).abs() < 1e-3);
            }
        }
    }

    proptest! {
        #[test]
        fn routes_agree_and_rows_stochastic(
            coords in proptest::collection::vec(0.0f64..1.0, 12),
            f in 1.2f64..6.0,
            seed in 0u64..1000,
        ) {
            let vectors: Vec<TaskVector> = coords
                .chunks(2)
                .enumerate()
                .map(|(i, c)| tv(i, c))
                .collect();
            let model = kmeans(&vectors, 2, seed, 100, 1e-9).unwrap();
            let a = fuzzify(&vectors, &model, f).unwrap();
            let b = eq1_reference(&vectors, &model, f).unwrap();
            for i in 0..vectors.len() {
                let sum: f64 = a.row(i).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for j in 0..2 {
                    prop_assert!((a.row(i)[j] - b.row(i)[j]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn scale_invariance(
            coords in proptest::collection::vec(0.1f64..1.0, 8),
            alpha in 0.25f64..8.0,
        ) {
            let vectors: Vec<TaskVector> = coords
                .chunks(2)
                .enumerate()
                .map(|(i, c)| tv(i, c))
                .collect();
            let model = kmeans(&vectors, 2, 11, 100, 1e-9).unwrap();
            let base = fuzzify(&vectors, &model, 2.0).unwrap();

            let scaled_vectors: Vec<TaskVector> = vectors
                .iter()
                .map(|v| tv(v.task, &v.values.iter().map(|x| x * alpha).collect::<Vec<_>>()))
                .collect();
            let scaled_model = ClusterModel {
                centroids: model
                    .centroids
                    .iter()
                    .map(|c| c.iter().map(|x| x * alpha).collect())
                    .collect(),
                ..model.clone()
            };
            let scaled = fuzzify(&scaled_vectors, &scaled_model, 2.0).unwrap();
            for i in 0..vectors.len() {
                for j in 0..2 {
                    prop_assert!((base.row(i)[j] - scaled.row(i)[j]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn permutation_equivariance(
            coords in proptest::collection::vec(0.0f64..1.0, 10),
        ) {
            let vectors: Vec<TaskVector> = coords
                .chunks(2)
                .enumerate()
                .map(|(i, c)| tv(i, c))
                .collect();
            let model = kmeans(&vectors, 2, 5, 100, 1e-9).unwrap();
            let base = fuzzify(&vectors, &model, 2.0).unwrap();

            let mut reversed: Vec<TaskVector> = vectors.clone();
            reversed.reverse();
            let permuted = fuzzify(&reversed, &model, 2.0).unwrap();
            let n = vectors.len();
            for i in 0..n {
                prop_assert_eq!(base.row(i), permuted.row(n - 1 - i));
            }
        }

        #[test]
        fn hardening_matches_nearest_centroid(
            coords in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let vectors: Vec<TaskVector> = coords
                .chunks(2)
                .enumerate()
                .map(|(i, c)| tv(i, c))
                .collect();
            let model = kmeans(&vectors, 3, 9, 100, 1e-9).unwrap();
            let soft = fuzzify(&vectors, &model, 2.0).unwrap();
            for (i, v) in vectors.iter().enumerate() {
                let d = distances_to_centroids(&v.values, &model);
                let mut sorted = d.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let distinct = sorted.windows(2).all(|w| (w[1] - w[0]).abs() > 1e-12);
                if distinct {
                    prop_assert_eq!(argmax(soft.row(i)), model.nearest(&v.values).0);
                }
            }
        }

        #[test]
        fn kmeans_inertia_non_increasing(
            coords in proptest::collection::vec(0.0f64..1.0, 16),
            seed in 0u64..100,
        ) {
            let vectors: Vec<TaskVector> = coords
                .chunks(2)
                .enumerate()
                .map(|(i, c)| tv(i, c))
                .collect();
            let model = kmeans(&vectors, 3, seed, 300, 1e-9).unwrap();
            for w in model.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            // returned assignment is nearest-centroid by construction
            let assignment = model.assign(&vectors);
            for (v, &j) in vectors.iter().zip(&assignment) {
                let (nearest, d) = model.nearest(&v.values);
                prop_assert!(j == nearest || (euclidean(&v.values, &model.centroids[j]) - d).abs() < 1e-15);
            }
        }
    }
}
