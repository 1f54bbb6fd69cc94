//! Training-dynamics log: per-epoch true-class probabilities for every
//! (task, data point) pair, streamed to JSON Lines and accumulated into
//! Welford moments on the fly.
//!
//! File format (`stg-dynlog/1`): first line
//! `{"format":"stg-dynlog/1","n_tasks":<int>,"n_points":<int>}`, then one
//! `{"e":<int>,"t":<int>,"i":<int>,"p":<float>}` object per record. UTF-8,
//! LF line endings. Probabilities round-trip exactly (shortest f64 text).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DYNLOG_FORMAT: &str = "stg-dynlog/1";

/// Single-pass mean/variance accumulator (Welford).
///
/// `m2` is the running sum of squared deviations; population variance is
/// `m2 / count`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamingMoments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl StreamingMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Running mean; 0 when empty.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance `m2 / count`; 0 when empty.
    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            // m2 can go epsilon-negative through cancellation; clamp.
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn population_std(&self) -> f64 {
        self.population_variance().sqrt()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    n_tasks: usize,
    n_points: usize,
}

/// One logged observation: at epoch `e`, task `t` assigned probability `p`
/// to the true class of point `i`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DynRecord {
    pub e: u32,
    pub t: usize,
    pub i: usize,
    pub p: f64,
}

/// Append-only stream of true-class probabilities plus live moments.
///
/// Single-writer: callers serialize appends. A log loaded from disk is
/// read-only; its moments are replayed identically to live recording.
#[derive(Debug)]
pub struct TrainingDynamicsLog {
    n_tasks: usize,
    n_points: usize,
    epoch_count: u32,
    /// Per (task, point): the (epoch, p_true) stream in record order.
    series: Vec<Vec<(u32, f64)>>,
    moments: Vec<StreamingMoments>,
    writer: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl TrainingDynamicsLog {
    /// Opens a fresh log backed by `path`; the header line is persisted
    /// immediately and records are appended as they arrive.
    pub fn create(n_tasks: usize, n_points: usize, path: impl AsRef<Path>) -> Result<Self> {
        let mut log = Self::in_memory(n_tasks, n_points)?;
        let file = File::create(path.as_ref())?;
        let mut writer = BufWriter::new(file);
        let header = Header {
            format: DYNLOG_FORMAT.to_string(),
            n_tasks,
            n_points,
        };
        serde_json::to_writer(&mut writer, &header)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        log.writer = Some(writer);
        log.path = Some(path.as_ref().to_path_buf());
        Ok(log)
    }

    /// Log with no backing file; records live only in memory.
    pub fn in_memory(n_tasks: usize, n_points: usize) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::Argument("n_tasks must be at least 1".into()));
        }
        if n_points == 0 {
            return Err(Error::Argument("n_points must be at least 1".into()));
        }
        Ok(Self {
            n_tasks,
            n_points,
            epoch_count: 0,
            series: vec![Vec::new(); n_tasks * n_points],
            moments: vec![StreamingMoments::new(); n_tasks * n_points],
            writer: None,
            path: None,
        })
    }

    /// Reconstructs a log from a `stg-dynlog/1` file. The result is
    /// read-only; moments are replayed in file order.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();

        let header_line = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty file, expected header".into(),
                })
            }
        };
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != DYNLOG_FORMAT {
            return Err(Error::Schema(format!(
                "unsupported format {:?}, expected {:?}",
                header.format, DYNLOG_FORMAT
            )));
        }
        let mut log = Self::in_memory(header.n_tasks, header.n_points)?;
        log.path = Some(path.as_ref().to_path_buf());

        for (lineno, line) in lines.enumerate() {
            let lineno = lineno + 2; // 1-based, after the header
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: DynRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            log.check(rec.e, rec.t, rec.i, rec.p).map_err(|e| match e {
                // On load, violations of the header contract are schema errors.
                Error::Argument(msg) => Error::Schema(format!("line {lineno}: {msg}")),
                other => other,
            })?;
            log.ingest(rec.e, rec.t, rec.i, rec.p);
        }
        Ok(log)
    }

    /// Appends one observation. Errors on out-of-range indices, probabilities
    /// outside [0,1], duplicate (epoch, task, point) triples, and epochs that
    /// go backwards within a (task, point) stream.
    pub fn record(&mut self, epoch: u32, task: usize, point: usize, p_true: f64) -> Result<()> {
        if self.writer.is_none() && self.path.is_some() {
            return Err(Error::Argument(
                "log was loaded read-only; appends are not supported".into(),
            ));
        }
        self.check(epoch, task, point, p_true)?;
        if let Some(writer) = self.writer.as_mut() {
            let rec = DynRecord {
                e: epoch,
                t: task,
                i: point,
                p: p_true,
            };
            serde_json::to_writer(&mut *writer, &rec)?;
            writer.write_all(b"\n")?;
        }
        self.ingest(epoch, task, point, p_true);
        Ok(())
    }

    fn check(&self, epoch: u32, task: usize, point: usize, p_true: f64) -> Result<()> {
        if task >= self.n_tasks {
            return Err(Error::Argument(format!(
                "task {task} out of range (n_tasks = {})",
                self.n_tasks
            )));
        }
        if point >= self.n_points {
            return Err(Error::Argument(format!(
                "point {point} out of range (n_points = {})",
                self.n_points
            )));
        }
        if epoch == 0 {
            return Err(Error::Argument("epoch indices start at 1".into()));
        }
        if !(0.0..=1.0).contains(&p_true) {
            return Err(Error::Argument(format!(
                "p_true {p_true} outside [0, 1]"
            )));
        }
        if let Some(&(last, _)) = self.series[self.idx(task, point)].last() {
            if epoch == last {
                return Err(Error::DuplicateRecord { epoch, task, point });
            }
            if epoch < last {
                return Err(Error::Argument(format!(
                    "epoch {epoch} precedes epoch {last} already recorded for task {task}, point {point}"
                )));
            }
        }
        Ok(())
    }

    fn ingest(&mut self, epoch: u32, task: usize, point: usize, p_true: f64) {
        let idx = self.idx(task, point);
        self.series[idx].push((epoch, p_true));
        self.moments[idx].push(p_true);
        self.epoch_count = self.epoch_count.max(epoch);
    }

    /// Flushes buffered appends to stable storage.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(writer) = self.writer.as_mut() {
            writer.flush()?;
        }
        Ok(())
    }

    fn idx(&self, task: usize, point: usize) -> usize {
        task * self.n_points + point
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Largest epoch seen so far.
    pub fn epoch_count(&self) -> u32 {
        self.epoch_count
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Live moments over everything recorded for (task, point).
    pub fn moments(&self, task: usize, point: usize) -> &StreamingMoments {
        &self.moments[self.idx(task, point)]
    }

    /// The (epoch, p_true) stream for (task, point), in record order.
    pub fn series(&self, task: usize, point: usize) -> &[(u32, f64)] {
        &self.series[self.idx(task, point)]
    }
}
