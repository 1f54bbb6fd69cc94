//! Data maps: per-point (confidence, variability) statistics per task at a
//! schedule of snapshot epochs, assembled into the full per-task feature grid.
//!
//! Confidence `mu` is the mean true-class probability over epochs `1..=E`;
//! variability `sigma` is the population standard deviation of the same
//! values. Snapshots are cumulative from epoch 1, so `sigma` is bounded by
//! 0.5 and well-defined at a single epoch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{StreamingMoments, TrainingDynamicsLog};
use crate::error::{Error, Result};

pub const TENSOR_FORMAT: &str = "stg-dmt/1";

/// Strictly increasing list of snapshot epochs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotSchedule {
    epochs: Vec<u32>,
}

impl SnapshotSchedule {
    pub fn new(epochs: Vec<u32>) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::Argument("snapshot schedule is empty".into()));
        }
        if epochs[0] == 0 {
            return Err(Error::Argument("snapshot epochs start at 1".into()));
        }
        if epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(
                "snapshot epochs must be strictly increasing".into(),
            ));
        }
        Ok(Self { epochs })
    }

    /// Default schedule: every `step` epochs up to `last`, with `last`
    /// always included.
    pub fn every(step: u32, last: u32) -> Result<Self> {
        if step == 0 || last == 0 {
            return Err(Error::Argument("step and last must be at least 1".into()));
        }
        let mut epochs: Vec<u32> = (1..=last / step).map(|k| k * step).collect();
        if epochs.last() != Some(&last) {
            epochs.push(last);
        }
        Self::new(epochs)
    }

    pub fn epochs(&self) -> &[u32] {
        &self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> u32 {
        *self.epochs.last().expect("schedule is non-empty")
    }
}

/// One task's (mu, sigma) pair per training point at one snapshot epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMap {
    pub task: usize,
    pub snapshot_epoch: u32,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DataMap {
    pub fn n_points(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MapEntry {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorFile {
    format: String,
    n_tasks: usize,
    n_points: usize,
    epochs: Vec<u32>,
    /// maps[task][snapshot]
    maps: Vec<Vec<MapEntry>>,
}

/// Complete grid of data maps: one per (task, snapshot epoch) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMapTensor {
    n_tasks: usize,
    n_points: usize,
    schedule: SnapshotSchedule,
    /// Task-major, snapshots in schedule order.
    maps: Vec<DataMap>,
}

impl DataMapTensor {
    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn schedule(&self) -> &SnapshotSchedule {
        &self.schedule
    }

    pub fn map(&self, task: usize, snapshot: usize) -> &DataMap {
        &self.maps[task * self.schedule.len() + snapshot]
    }

    pub fn maps(&self) -> &[DataMap] {
        &self.maps
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = TensorFile {
            format: TENSOR_FORMAT.to_string(),
            n_tasks: self.n_tasks,
            n_points: self.n_points,
            epochs: self.schedule.epochs().to_vec(),
            maps: (0..self.n_tasks)
                .map(|t| {
                    (0..self.schedule.len())
                        .map(|s| {
                            let m = self.map(t, s);
                            MapEntry {
                                mu: m.mu.clone(),
                                sigma: m.sigma.clone(),
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        let mut writer = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut writer, &file)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path.as_ref())?);
        let file: TensorFile = serde_json::from_reader(reader)?;
        if file.format != TENSOR_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported format {:?}, expected {:?}",
                file.format, TENSOR_FORMAT
            )));
        }
        let schedule = SnapshotSchedule::new(file.epochs)
            .map_err(|e| Error::Schema(format!("bad schedule in tensor file: {e}")))?;
        if file.maps.len() != file.n_tasks {
            return Err(Error::Schema(format!(
                "tensor lists {} tasks, header says {}",
                file.maps.len(),
                file.n_tasks
            )));
        }
        let mut maps = Vec::with_capacity(file.n_tasks * schedule.len());
        for (t, row) in file.maps.into_iter().enumerate() {
            if row.len() != schedule.len() {
                return Err(Error::Schema(format!(
                    "task {t} has {} snapshots, schedule has {}",
                    row.len(),
                    schedule.len()
                )));
            }
            for (s, entry) in row.into_iter().enumerate() {
                if entry.mu.len() != file.n_points || entry.sigma.len() != file.n_points {
                    return Err(Error::Schema(format!(
                        "task {t} snapshot {s} has wrong point count"
                    )));
                }
                maps.push(DataMap {
                    task: t,
                    snapshot_epoch: schedule.epochs()[s],
                    mu: entry.mu,
                    sigma: entry.sigma,
                });
            }
        }
        Ok(Self {
            n_tasks: file.n_tasks,
            n_points: file.n_points,
            schedule,
            maps,
        })
    }
}

/// Walks one (task, point) stream and checks that epochs 1..=E are all
/// present, accumulating moments along the way.
fn moments_through_epoch(
    log: &TrainingDynamicsLog,
    task: usize,
    point: usize,
    snapshot_epoch: u32,
) -> Result<StreamingMoments> {
    let mut moments = StreamingMoments::new();
    let mut expected = 1u32;
    for &(epoch, p) in log.series(task, point) {
        if epoch > snapshot_epoch {
            break;
        }
        if epoch != expected {
            // Streams are strictly increasing, so the gap starts at `expected`.
            return Err(Error::IncompleteData {
                epoch: expected,
                task,
                point,
            });
        }
        moments.push(p);
        expected += 1;
    }
    if expected != snapshot_epoch + 1 {
        return Err(Error::IncompleteData {
            epoch: expected,
            task,
            point,
        });
    }
    Ok(moments)
}

/// Data map for one task at one snapshot epoch: cumulative mean and
/// population std of p_true over epochs 1..=snapshot_epoch, per point.
pub fn compute_datamap(
    log: &TrainingDynamicsLog,
    task: usize,
    snapshot_epoch: u32,
) -> Result<DataMap> {
    if task >= log.n_tasks() {
        return Err(Error::Argument(format!(
            "task {task} out of range (n_tasks = {})",
            log.n_tasks()
        )));
    }
    if snapshot_epoch == 0 {
        return Err(Error::Argument("snapshot epochs start at 1".into()));
    }
    let mut mu = Vec::with_capacity(log.n_points());
    let mut sigma = Vec::with_capacity(log.n_points());
    for point in 0..log.n_points() {
        let m = moments_through_epoch(log, task, point, snapshot_epoch)?;
        mu.push(m.mean());
        sigma.push(m.population_std());
    }
    Ok(DataMap {
        task,
        snapshot_epoch,
        mu,
        sigma,
    })
}

/// Full (n, e, N, 2) grid over every task and snapshot in `schedule`.
/// Each snapshot uses the cumulative window 1..=E_i.
pub fn compute_tensor(
    log: &TrainingDynamicsLog,
    schedule: &SnapshotSchedule,
) -> Result<DataMapTensor> {
    let mut maps = Vec::with_capacity(log.n_tasks() * schedule.len());
    for task in 0..log.n_tasks() {
        for &epoch in schedule.epochs() {
            maps.push(compute_datamap(log, task, epoch)?);
        }
    }
    Ok(DataMapTensor {
        n_tasks: log.n_tasks(),
        n_points: log.n_points(),
        schedule: schedule.clone(),
        maps,
    })
}

/// Merges single-task tensors (one per task, from separate single-task
/// training runs) into one tensor indistinguishable in shape from the
/// joint-training route.
pub fn merge_stl_maps(per_task: Vec<(usize, DataMapTensor)>) -> Result<DataMapTensor> {
    if per_task.is_empty() {
        return Err(Error::Argument("no single-task tensors given".into()));
    }
    let n = per_task.len();
    let n_points = per_task[0].1.n_points;
    let schedule = per_task[0].1.schedule.clone();

    let mut seen = vec![false; n];
    let mut slots: Vec<Option<DataMapTensor>> = (0..n).map(|_| None).collect();
    for (task, tensor) in per_task {
        if tensor.n_tasks != 1 {
            return Err(Error::Argument(format!(
                "tensor for task {task} holds {} tasks, expected a single-task slice",
                tensor.n_tasks
            )));
        }
        if tensor.n_points != n_points {
            return Err(Error::Schema(format!(
                "tensor for task {task} has {} points, expected {n_points}",
                tensor.n_points
            )));
        }
        if tensor.schedule != schedule {
            return Err(Error::Schema(format!(
                "tensor for task {task} has schedule {:?}, expected {:?}",
                tensor.schedule.epochs(),
                schedule.epochs()
            )));
        }
        if task >= n {
            return Err(Error::Argument(format!(
                "task index {task} out of range for {n} tensors"
            )));
        }
        if seen[task] {
            return Err(Error::Argument(format!("task {task} given twice")));
        }
        seen[task] = true;
        slots[task] = Some(tensor);
    }

    let mut maps = Vec::with_capacity(n * schedule.len());
    for (task, slot) in slots.into_iter().enumerate() {
        let tensor = slot.expect("all slots filled after uniqueness check");
        for (s, map) in tensor.maps.into_iter().enumerate() {
            maps.push(DataMap {
                task,
                snapshot_epoch: schedule.epochs()[s],
                mu: map.mu,
                sigma: map.sigma,
            });
        }
    }
    Ok(DataMapTensor {
        n_tasks: n,
        n_points,
        schedule,
        maps,
    })
}

/// Writes the (sigma, mu) scatter data for one map as CSV with columns
/// point_id, variability, confidence.
pub fn export_scatter(map: &DataMap, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path.as_ref())?);
    writeln!(writer, "point_id,variability,confidence")?;
    for i in 0..map.n_points() {
        writeln!(writer, "{},{},{}", i, map.sigma[i], map.mu[i])?;
    }
    writer.flush()?;
    Ok(())
}
