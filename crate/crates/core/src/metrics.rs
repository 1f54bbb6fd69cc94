//! Evaluation metrics and clustering-quality diagnostics: binary F1 from
//! confusion counts, unweighted macro averaging, and agreement between a
//! hardened clustering and a ground-truth task partition.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::cluster::MembershipMatrix;
use crate::error::{Error, Result};

/// Binary confusion counts for one task on one split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn observe(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// F1 = 2tp / (2tp + fp + fn). Undefined when tp + fp + fn = 0.
pub fn f1(counts: &ConfusionCounts) -> Result<f64> {
    let denom = 2 * counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        return Err(Error::UndefinedMetric(
            "F1 with tp + fp + fn = 0".into(),
        ));
    }
    Ok(2.0 * counts.tp as f64 / denom as f64)
}

/// Unweighted mean of per-task F1 scores.
pub fn macro_f1(per_task: &[f64]) -> Result<f64> {
    if per_task.is_empty() {
        return Err(Error::Argument("macro F1 over an empty task list".into()));
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// How a cluster-to-group matching was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMethod {
    /// Exhaustive search over one-to-one assignments (m <= 10).
    Exact,
    /// Largest-overlap-first heuristic, used beyond the exact bound.
    Greedy,
}

/// Result of comparing a hardened clustering against a ground-truth
/// partition of the tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupingReport {
    /// Fraction of tasks whose cluster maps onto their true group under
    /// the best one-to-one cluster-to-group assignment.
    pub agreement: f64,
    /// The (cluster, group) pairs of that assignment.
    pub matching: Vec<(usize, usize)>,
    pub method: MatchingMethod,
    /// Per-task distance to the nearest centroid, when the caller has them.
    pub per_task: Vec<f64>,
}

impl GroupingReport {
    /// Attaches per-task nearest-centroid distances for diagnostics.
    pub fn with_distances(mut self, per_task: Vec<f64>) -> Self {
        self.per_task = per_task;
        self
    }
}

/// Agreement between hardened memberships and a ground-truth grouping:
/// the best one-to-one mapping of clusters onto groups is found (exactly
/// for m <= 10, greedily above that) and the matched fraction returned.
pub fn grouping_agreement(
    hardened: &MembershipMatrix,
    truth: &[usize],
) -> Result<GroupingReport> {
    let n = hardened.n_tasks();
    if truth.len() != n {
        return Err(Error::Argument(format!(
            "ground truth lists {} tasks, memberships have {n}",
            truth.len()
        )));
    }
    let assignment = hardened.hard_assignment();
    let m = hardened.m();
    let groups = truth.iter().copied().max().map_or(0, |g| g + 1);
    if groups == 0 {
        return Err(Error::Argument("ground truth is empty".into()));
    }

    // Contingency table: overlap[c][g] = tasks in cluster c with true group g.
    let mut overlap = vec![vec![0u64; groups]; m];
    for (task, &c) in assignment.iter().enumerate() {
        overlap[c][truth[task]] += 1;
    }

    let (matched, matching, method) = if m <= 10 {
        best_matching_exact(&overlap)
    } else {
        best_matching_greedy(&overlap)
    };

    Ok(GroupingReport {
        agreement: matched as f64 / n as f64,
        matching,
        method,
        per_task: Vec::new(),
    })
}

/// Exhaustive one-to-one matching of clusters onto groups, maximizing the
/// summed overlap. Enumerates the injections of the smaller side.
fn best_matching_exact(overlap: &[Vec<u64>]) -> (u64, Vec<(usize, usize)>, MatchingMethod) {
    let m = overlap.len();
    let groups = overlap[0].len();
    let mut best = (0u64, Vec::new());
    if m <= groups {
        for perm in (0..groups).permutations(m) {
            let score: u64 = perm.iter().enumerate().map(|(c, &g)| overlap[c][g]).sum();
            if score > best.0 || best.1.is_empty() {
                best = (score, perm.iter().enumerate().map(|(c, &g)| (c, g)).collect());
            }
        }
    } else {
        for perm in (0..m).permutations(groups) {
            let score: u64 = perm.iter().enumerate().map(|(g, &c)| overlap[c][g]).sum();
            if score > best.0 || best.1.is_empty() {
                best = (score, perm.iter().enumerate().map(|(g, &c)| (c, g)).collect());
            }
        }
    }
    best.1.sort_unstable();
    (best.0, best.1, MatchingMethod::Exact)
}

/// Greedy matching: repeatedly take the largest remaining overlap cell.
fn best_matching_greedy(overlap: &[Vec<u64>]) -> (u64, Vec<(usize, usize)>, MatchingMethod) {
    let m = overlap.len();
    let groups = overlap[0].len();
    let mut cluster_used = vec![false; m];
    let mut group_used = vec![false; groups];
    let mut total = 0u64;
    let mut matching = Vec::new();
    for _ in 0..m.min(groups) {
        let mut best: Option<(u64, usize, usize)> = None;
        for c in 0..m {
            if cluster_used[c] {
                continue;
            }
            for g in 0..groups {
                if group_used[g] {
                    continue;
                }
                if best.map_or(true, |(v, _, _)| overlap[c][g] > v) {
                    best = Some((overlap[c][g], c, g));
                }
            }
        }
        let Some((v, c, g)) = best else { break };
        cluster_used[c] = true;
        group_used[g] = true;
        total += v;
        matching.push((c, g));
    }
    matching.sort_unstable();
    (total, matching, MatchingMethod::Greedy)
}
