//! Command surface wiring the pipeline end to end: record dynamics, build
//! data-map tensors, cluster tasks into memberships, train specialists, and
//! evaluate. Each command is re-runnable and idempotent given identical
//! inputs, and the whole pipeline is deterministic for a fixed run config.
//!
//! Exit codes: 0 success, 2 argument/config error, 3 data/schema error,
//! 4 numeric divergence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{
    build_task_vectors, fuzzify, harden, kmeans, normalize_task_vectors, MembershipMatrix,
    DEFAULT_F, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::datamap::{compute_tensor, export_scatter, merge_stl_maps, DataMapTensor, SnapshotSchedule};
use crate::dynamics::TrainingDynamicsLog;
use crate::error::{Error, Result};
use crate::specialize::{
    evaluate_ensemble, evaluate_model, train_specialists, EvalReport, SpecialistEnsemble,
};
use crate::toytrain::{train, train_single_task, Split, SuiteSpec, ToyModel, TrainerConfig};

pub const RUN_CONFIG_FORMAT: &str = "stg-run/1";
pub const ENSEMBLE_FORMAT: &str = "stg-ens/1";
pub const EVAL_FORMAT: &str = "stg-eval/1";

/// Environment variable overriding the output directory.
pub const ENV_OUT: &str = "STG_OUT";
/// Environment variable overriding the master seed.
pub const ENV_SEED: &str = "STG_SEED";

/// Which route produced the data maps: one joint training run, or merged
/// per-task single-task runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    Mtl,
    Stl,
}

impl MapSource {
    pub fn name(&self) -> &'static str {
        match self {
            MapSource::Mtl => "mtl",
            MapSource::Stl => "stl",
        }
    }
}

fn default_trainer_epochs() -> u32 {
    TrainerConfig::default().epochs
}
fn default_trainer_lr() -> f64 {
    TrainerConfig::default().learning_rate
}
fn default_trainer_batch() -> usize {
    TrainerConfig::default().batch_size
}
fn default_trainer_hidden() -> usize {
    TrainerConfig::default().hidden_dim
}
fn default_trainer_momentum() -> f64 {
    TrainerConfig::default().momentum
}
fn default_trainer_pos_weight() -> bool {
    TrainerConfig::default().pos_weight
}

/// Trainer section of the run config; the seed defaults to the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerSection {
    #[serde(default = "default_trainer_epochs")]
    pub epochs: u32,
    #[serde(default = "default_trainer_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_trainer_batch")]
    pub batch_size: usize,
    #[serde(default = "default_trainer_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_trainer_momentum")]
    pub momentum: f64,
    #[serde(default = "default_trainer_pos_weight")]
    pub pos_weight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            epochs: default_trainer_epochs(),
            learning_rate: default_trainer_lr(),
            batch_size: default_trainer_batch(),
            hidden_dim: default_trainer_hidden(),
            momentum: default_trainer_momentum(),
            pos_weight: default_trainer_pos_weight(),
            seed: None,
        }
    }
}

fn default_m() -> usize {
    2
}
fn default_f() -> f64 {
    DEFAULT_F
}

/// On-disk run configuration (`stg-run/1`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfigFile {
    pub format: String,
    /// Path to the suite spec, relative to the working directory.
    pub suite: PathBuf,
    #[serde(default)]
    pub trainer: TrainerSection,
    /// Snapshot epochs; defaults to every 5 epochs up to the final one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<u32>>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(rename = "F", default = "default_f")]
    pub fuzzification: f64,
    /// Master seed: clustering seed, and the trainer seed unless that is
    /// set explicitly.
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Command-line overrides applied on top of environment and file values.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub m: Option<usize>,
    pub fuzzification: Option<f64>,
    pub schedule: Option<Vec<u32>>,
}

/// Fully resolved configuration with flag/env precedence applied and all
/// referenced paths checked.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub suite_path: PathBuf,
    pub suite_spec: SuiteSpec,
    pub trainer: TrainerConfig,
    pub schedule: Option<Vec<u32>>,
    pub m: usize,
    pub fuzzification: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Loads and validates a run config. Precedence: flags, then the
    /// STG_SEED / STG_OUT environment variables, then the file.
    pub fn load(path: impl AsRef<Path>, overrides: &ConfigOverrides) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        let file: RunConfigFile = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
        if file.format != RUN_CONFIG_FORMAT {
            return Err(Error::Config(format!(
                "unsupported config format {:?}, expected {RUN_CONFIG_FORMAT:?}",
                file.format
            )));
        }

        let env_seed = match std::env::var(ENV_SEED) {
            Ok(raw) => Some(raw.parse::<u64>().map_err(|_| {
                Error::Config(format!("{ENV_SEED} must be an unsigned integer, got {raw:?}"))
            })?),
            Err(_) => None,
        };
        let env_out = std::env::var(ENV_OUT).ok().map(PathBuf::from);

        let seed = overrides.seed.or(env_seed).unwrap_or(file.seed);
        let out_dir = overrides
            .out
            .clone()
            .or(env_out)
            .unwrap_or_else(|| file.out_dir.clone());
        let m = overrides.m.unwrap_or(file.m);
        let fuzzification = overrides.fuzzification.unwrap_or(file.fuzzification);
        let schedule = overrides.schedule.clone().or_else(|| file.schedule.clone());

        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(fuzzification > 1.0) {
            return Err(Error::Config(format!(
                "fuzzification index F must exceed 1, got {fuzzification}"
            )));
        }
        if let Some(epochs) = &schedule {
            SnapshotSchedule::new(epochs.clone())
                .map_err(|e| Error::Config(format!("bad schedule: {e}")))?;
        }

        let suite_spec = SuiteSpec::load(&file.suite)
            .map_err(|e| Error::Config(format!("suite {}: {e}", file.suite.display())))?;

        let trainer = TrainerConfig {
            epochs: file.trainer.epochs,
            learning_rate: file.trainer.learning_rate,
            batch_size: file.trainer.batch_size,
            hidden_dim: file.trainer.hidden_dim,
            momentum: file.trainer.momentum,
            pos_weight: file.trainer.pos_weight,
            seed: file.trainer.seed.unwrap_or(seed),
        };
        trainer
            .validate()
            .map_err(|e| Error::Config(format!("trainer: {e}")))?;

        Ok(Self {
            suite_path: file.suite,
            suite_spec,
            trainer,
            schedule,
            m,
            fuzzification,
            seed,
            out_dir,
        })
    }

    pub fn mtl_log_path(&self) -> PathBuf {
        self.out_dir.join("dynamics_mtl.jsonl")
    }

    pub fn stl_log_path(&self, task: usize) -> PathBuf {
        self.out_dir.join(format!("dynamics_stl_t{task}.jsonl"))
    }

    pub fn mtl_model_path(&self) -> PathBuf {
        self.out_dir.join("model_mtl.json")
    }

    pub fn stl_model_path(&self, task: usize) -> PathBuf {
        self.out_dir.join(format!("model_stl_t{task}.json"))
    }

    pub fn tensor_path(&self, source: MapSource) -> PathBuf {
        self.out_dir.join(format!("tensor_{}.json", source.name()))
    }

    pub fn membership_path(&self) -> PathBuf {
        self.out_dir.join("memberships.json")
    }

    pub fn specialist_path(&self, cluster: usize) -> PathBuf {
        self.out_dir.join(format!("specialist_{cluster}.json"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("ensemble.json")
    }

    fn resolved_schedule(&self, last_epoch: u32) -> Result<SnapshotSchedule> {
        match &self.schedule {
            Some(epochs) => SnapshotSchedule::new(epochs.clone()),
            None => SnapshotSchedule::every(5, last_epoch),
        }
    }
}

/// Trains the joint MTL model (source mtl) or one single-task model per
/// task (source stl), logging dynamics and saving checkpoints.
pub fn cmd_record(config: &RunConfig, source: MapSource) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let suite = config.suite_spec.build()?;
    let n_train = suite.n_points(Split::Train);
    match source {
        MapSource::Mtl => {
            let mut log =
                TrainingDynamicsLog::create(suite.n_tasks(), n_train, config.mtl_log_path())?;
            let mut model = ToyModel::init(
                suite.input_dim(),
                config.trainer.hidden_dim,
                suite.n_tasks(),
                config.trainer.seed,
            )?;
            train(&mut model, &suite, &config.trainer, &mut log, None)?;
            log.flush()?;
            model.save(config.mtl_model_path())?;
        }
        MapSource::Stl => {
            for task in 0..suite.n_tasks() {
                let mut log = TrainingDynamicsLog::create(1, n_train, config.stl_log_path(task))?;
                let mut model = ToyModel::init(
                    suite.input_dim(),
                    config.trainer.hidden_dim,
                    1,
                    config.trainer.seed,
                )?;
                train_single_task(&mut model, &suite, task, &config.trainer, &mut log)?;
                log.flush()?;
                model.save(config.stl_model_path(task))?;
            }
        }
    }
    Ok(())
}

/// Computes the data-map tensor from the recorded dynamics. For the stl
/// source, per-task tensors are merged into one grid. `log_override`
/// substitutes an externally produced log for the mtl route.
pub fn cmd_maps(
    config: &RunConfig,
    source: MapSource,
    log_override: Option<&Path>,
) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let tensor = match source {
        MapSource::Mtl => {
            let log_path = log_override
                .map(Path::to_path_buf)
                .unwrap_or_else(|| config.mtl_log_path());
            let log = TrainingDynamicsLog::load(&log_path)?;
            let schedule = config.resolved_schedule(log.epoch_count())?;
            compute_tensor(&log, &schedule)?
        }
        MapSource::Stl => {
            let n_tasks = config.suite_spec.tasks.len();
            let mut parts = Vec::with_capacity(n_tasks);
            let mut schedule: Option<SnapshotSchedule> = None;
            for task in 0..n_tasks {
                let log = TrainingDynamicsLog::load(config.stl_log_path(task))?;
                let s = match &schedule {
                    Some(s) => s.clone(),
                    None => {
                        let s = config.resolved_schedule(log.epoch_count())?;
                        schedule = Some(s.clone());
                        s
                    }
                };
                parts.push((task, compute_tensor(&log, &s)?));
            }
            merge_stl_maps(parts)?
        }
    };
    tensor.save(config.tensor_path(source))
}

/// Clustering options surfaced on the command line.
#[derive(Debug, Clone)]
pub struct ClusterOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub normalize: bool,
    pub hard: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            normalize: false,
            hard: false,
        }
    }
}

/// Clusters the task vectors of a single log-derived tensor into m soft
/// (or hardened) memberships. One joint training run is all the clustering
/// stage ever consumes.
pub fn cmd_cluster(
    config: &RunConfig,
    tensor_path: Option<&Path>,
    source: MapSource,
    options: &ClusterOptions,
) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let tensor_path = tensor_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.tensor_path(source));
    let tensor = DataMapTensor::load(&tensor_path)?;
    let mut vectors = build_task_vectors(&tensor);
    if options.normalize {
        vectors = normalize_task_vectors(&vectors);
    }
    let model = kmeans(&vectors, config.m, config.seed, options.max_iter, options.tol)?;
    let mut memberships = fuzzify(&vectors, &model, config.fuzzification)?;
    if options.hard {
        memberships = harden(&memberships);
    }
    memberships.save(config.membership_path())
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    /// Membership file name, relative to the manifest's directory.
    membership_file: String,
    /// Specialist checkpoint names, relative to the manifest's directory.
    models: Vec<String>,
    /// Suite spec path as given in the run config.
    suite: PathBuf,
    seed: u64,
    epochs: u32,
    trainer: TrainerSection,
}

/// Trains one specialist per cluster using the membership columns as loss
/// weights and writes the ensemble manifest.
pub fn cmd_specialize(config: &RunConfig, membership_override: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let membership_path = membership_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.membership_path());
    let memberships = MembershipMatrix::load(&membership_path)?;
    let suite = config.suite_spec.build()?;
    let ensemble = train_specialists(&memberships, &suite, &config.trainer)?;

    let mut model_names = Vec::with_capacity(ensemble.models.len());
    for (j, model) in ensemble.models.iter().enumerate() {
        model.save(config.specialist_path(j))?;
        model_names.push(format!("specialist_{j}.json"));
    }
    let manifest = EnsembleManifest {
        format: ENSEMBLE_FORMAT.to_string(),
        membership_file: membership_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "memberships.json".to_string()),
        models: model_names,
        suite: config.suite_path.clone(),
        seed: config.trainer.seed,
        epochs: config.trainer.epochs,
        trainer: TrainerSection {
            epochs: config.trainer.epochs,
            learning_rate: config.trainer.learning_rate,
            batch_size: config.trainer.batch_size,
            hidden_dim: config.trainer.hidden_dim,
            momentum: config.trainer.momentum,
            pos_weight: config.trainer.pos_weight,
            seed: Some(config.trainer.seed),
        },
    };
    write_json_pretty(&config.manifest_path(), &manifest)
}

fn load_model_checked(path: &Path) -> Result<ToyModel> {
    if !path.exists() {
        return Err(Error::Schema(format!(
            "missing checkpoint {}",
            path.display()
        )));
    }
    ToyModel::load(path)
}

/// What cmd_eval should score: a specialist ensemble via its manifest, or
/// a bare multi-head checkpoint (the plain MTL baseline).
#[derive(Debug, Clone)]
pub enum EvalTarget {
    Manifest(PathBuf),
    Model { checkpoint: PathBuf, suite: PathBuf },
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    format: String,
    macro_f1: BTreeMap<String, f64>,
    per_task: Vec<EvalRow>,
}

#[derive(Debug, Serialize)]
struct EvalRow {
    task: usize,
    split: String,
    f1: f64,
}

/// Evaluates on the requested splits and writes the report CSV plus a JSON
/// summary. Returns the written (csv, json) paths.
pub fn cmd_eval(
    target: &EvalTarget,
    splits: &[Split],
    out_dir: Option<&Path>,
) -> Result<(PathBuf, PathBuf)> {
    if splits.is_empty() {
        return Err(Error::Argument("no evaluation split requested".into()));
    }
    let (reports, default_dir, stem) = match target {
        EvalTarget::Manifest(path) => {
            let manifest_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            let manifest: EnsembleManifest = serde_json::from_reader(BufReader::new(file))?;
            if manifest.format != ENSEMBLE_FORMAT {
                return Err(Error::Schema(format!(
                    "unsupported manifest format {:?}",
                    manifest.format
                )));
            }
            let suite = SuiteSpec::load(&manifest.suite)?.build()?;
            let memberships = MembershipMatrix::load(manifest_dir.join(&manifest.membership_file))?;
            let models = manifest
                .models
                .iter()
                .map(|name| load_model_checked(&manifest_dir.join(name)))
                .collect::<Result<Vec<_>>>()?;
            let ensemble =
                SpecialistEnsemble::new(memberships, models, manifest.seed, manifest.epochs)?;
            let reports = splits
                .iter()
                .map(|&split| evaluate_ensemble(&ensemble, &suite, split))
                .collect::<Result<Vec<_>>>()?;
            (reports, manifest_dir, "eval".to_string())
        }
        EvalTarget::Model { checkpoint, suite } => {
            let model = load_model_checked(checkpoint)?;
            let suite = SuiteSpec::load(suite)?.build()?;
            let reports = splits
                .iter()
                .map(|&split| evaluate_model(&model, &suite, split))
                .collect::<Result<Vec<_>>>()?;
            let dir = checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf();
            (reports, dir, "eval_model".to_string())
        }
    };

    let dir = out_dir.map(Path::to_path_buf).unwrap_or(default_dir);
    std::fs::create_dir_all(&dir)?;
    let suffix = splits
        .iter()
        .map(|s| s.name())
        .collect::<Vec<_>>()
        .join("_");
    let csv_path = dir.join(format!("{stem}_{suffix}.csv"));
    let json_path = dir.join(format!("{stem}_{suffix}.json"));
    write_eval_reports(&reports, &csv_path, &json_path)?;
    Ok((csv_path, json_path))
}

fn write_eval_reports(reports: &[EvalReport], csv_path: &Path, json_path: &Path) -> Result<()> {
    let mut csv = BufWriter::new(File::create(csv_path)?);
    writeln!(csv, "task,split,f1")?;
    let mut macro_f1 = BTreeMap::new();
    let mut rows = Vec::new();
    for report in reports {
        for (task, f1) in report.per_task.iter().enumerate() {
            writeln!(csv, "{},{},{}", task, report.split.name(), f1)?;
            rows.push(EvalRow {
                task,
                split: report.split.name().to_string(),
                f1: *f1,
            });
        }
        macro_f1.insert(report.split.name().to_string(), report.macro_f1);
    }
    csv.flush()?;
    write_json_pretty(
        json_path,
        &EvalSummary {
            format: EVAL_FORMAT.to_string(),
            macro_f1,
            per_task: rows,
        },
    )
}

/// What cmd_plot should emit: a data-map scatter or per-cluster membership
/// bar data.
#[derive(Debug, Clone)]
pub enum PlotTarget {
    /// (sigma, mu) scatter rows for one task at one snapshot epoch.
    Scatter {
        tensor: PathBuf,
        task: usize,
        epoch: Option<u32>,
    },
    /// (cluster, task, weight) rows, cluster-major.
    MembershipBars { memberships: PathBuf },
}

/// Emits plot data as CSV next to the input (or into `out_dir`); returns
/// the written path.
pub fn cmd_plot(target: &PlotTarget, out_dir: Option<&Path>) -> Result<PathBuf> {
    match target {
        PlotTarget::Scatter {
            tensor,
            task,
            epoch,
        } => {
            let grid = DataMapTensor::load(tensor)?;
            if *task >= grid.n_tasks() {
                return Err(Error::Argument(format!(
                    "task {task} out of range ({} tasks)",
                    grid.n_tasks()
                )));
            }
            let epochs = grid.schedule().epochs().to_vec();
            let epoch = epoch.unwrap_or_else(|| *epochs.last().expect("non-empty schedule"));
            let snapshot = epochs.iter().position(|&e| e == epoch).ok_or_else(|| {
                Error::Argument(format!(
                    "epoch {epoch} is not a snapshot (schedule {epochs:?})"
                ))
            })?;
            let dir = out_dir
                .map(Path::to_path_buf)
                .unwrap_or_else(|| tensor.parent().unwrap_or(Path::new(".")).to_path_buf());
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("scatter_t{task}_e{epoch}.csv"));
            export_scatter(grid.map(*task, snapshot), &path)?;
            Ok(path)
        }
        PlotTarget::MembershipBars { memberships } => {
            let mm = MembershipMatrix::load(memberships)?;
            let dir = out_dir
                .map(Path::to_path_buf)
                .unwrap_or_else(|| memberships.parent().unwrap_or(Path::new(".")).to_path_buf());
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("membership_bars.csv");
            let mut writer = BufWriter::new(File::create(&path)?);
            writeln!(writer, "cluster,task,weight")?;
            for cluster in 0..mm.m() {
                for task in 0..mm.n_tasks() {
                    writeln!(writer, "{},{},{}", cluster, task, mm.row(task)[cluster])?;
                }
            }
            writer.flush()?;
            Ok(path)
        }
    }
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Parses a "5,10,15" style schedule flag.
pub fn parse_schedule_flag(raw: &str) -> Result<Vec<u32>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<u32>()
                .map_err(|_| Error::Argument(format!("bad schedule entry {part:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrain::{TaskSpec, SUITE_FORMAT};

    fn write_suite(dir: &Path) -> PathBuf {
        let spec = SuiteSpec {
            format: SUITE_FORMAT.to_string(),
            latent_classes: 3,
            points_per_class: 6,
            input_dim: 4,
            factors: None,
            noise: 0.4,
            center_scale: 2.0,
            test_fraction: 0.25,
            seed: 5,
            split_seed: None,
            tasks: vec![
                TaskSpec::Class { class: 0 },
                TaskSpec::Union { classes: vec![1, 2] },
            ],
        };
        let path = dir.join("suite.json");
        spec.save(&path).unwrap();
        path
    }

    fn write_config(dir: &Path, suite: &Path) -> PathBuf {
        let config = RunConfigFile {
            format: RUN_CONFIG_FORMAT.to_string(),
            suite: suite.to_path_buf(),
            trainer: TrainerSection {
                epochs: 2,
                learning_rate: 0.2,
                batch_size: 4,
                hidden_dim: 3,
                momentum: 0.9,
                pos_weight: true,
                seed: None,
            },
            schedule: Some(vec![1, 2]),
            m: 2,
            fuzzification: 2.0,
            seed: 7,
            out_dir: dir.join("out"),
        };
        let path = dir.join("run.json");
        let file = File::create(&path).unwrap();
        serde_json::to_writer_pretty(file, &config).unwrap();
        path
    }

    #[test]
    fn config_missing_suite_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfigFile {
            format: RUN_CONFIG_FORMAT.to_string(),
            suite: dir.path().join("nope.json"),
            trainer: TrainerSection::default(),
            schedule: None,
            m: 2,
            fuzzification: 2.0,
            seed: 1,
            out_dir: dir.path().join("out"),
        };
        let path = dir.path().join("run.json");
        serde_json::to_writer(File::create(&path).unwrap(), &config).unwrap();
        match RunConfig::load(&path, &ConfigOverrides::default()) {
            Err(e @ Error::Config(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let suite = write_suite(dir.path());
        let path = write_config(dir.path(), &suite);
        let overrides = ConfigOverrides {
            seed: Some(99),
            m: Some(1),
            fuzzification: Some(4.0),
            out: Some(dir.path().join("elsewhere")),
            schedule: Some(vec![2]),
        };
        let config = RunConfig::load(&path, &overrides).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.trainer.seed, 99); // master seed flows into trainer
        assert_eq!(config.m, 1);
        assert_eq!(config.fuzzification, 4.0);
        assert_eq!(config.out_dir, dir.path().join("elsewhere"));
        assert_eq!(config.schedule, Some(vec![2]));
    }

    #[test]
    fn pipeline_end_to_end_in_process() {
        let dir = tempfile::tempdir().unwrap();
        let suite = write_suite(dir.path());
        let path = write_config(dir.path(), &suite);
        let config = RunConfig::load(&path, &ConfigOverrides::default()).unwrap();

        cmd_record(&config, MapSource::Mtl).unwrap();
        cmd_maps(&config, MapSource::Mtl, None).unwrap();
        cmd_cluster(&config, None, MapSource::Mtl, &ClusterOptions::default()).unwrap();
        cmd_specialize(&config, None).unwrap();
        let (csv, json) = cmd_eval(
            &EvalTarget::Manifest(config.manifest_path()),
            &[Split::Test],
            None,
        )
        .unwrap();
        assert!(csv.exists() && json.exists());
        let scatter = cmd_plot(
            &PlotTarget::Scatter {
                tensor: config.tensor_path(MapSource::Mtl),
                task: 0,
                epoch: None,
            },
            None,
        )
        .unwrap();
        assert!(scatter.exists());
        let bars = cmd_plot(
            &PlotTarget::MembershipBars {
                memberships: config.membership_path(),
            },
            None,
        )
        .unwrap();
        let text = std::fs::read_to_string(bars).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2); // header + m*n rows
    }

    #[test]
    fn eval_missing_checkpoint_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let suite = write_suite(dir.path());
        let path = write_config(dir.path(), &suite);
        let config = RunConfig::load(&path, &ConfigOverrides::default()).unwrap();
        cmd_record(&config, MapSource::Mtl).unwrap();
        cmd_maps(&config, MapSource::Mtl, None).unwrap();
        cmd_cluster(&config, None, MapSource::Mtl, &ClusterOptions::default()).unwrap();
        cmd_specialize(&config, None).unwrap();
        std::fs::remove_file(config.specialist_path(0)).unwrap();
        match cmd_eval(
            &EvalTarget::Manifest(config.manifest_path()),
            &[Split::Test],
            None,
        ) {
            Err(e @ Error::Schema(_)) => assert_eq!(e.exit_code(), 3),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schedule_flag_parsing() {
        assert_eq!(parse_schedule_flag("5,10, 15").unwrap(), vec![5, 10, 15]);
        assert!(parse_schedule_flag("5,x").is_err());
    }
}
