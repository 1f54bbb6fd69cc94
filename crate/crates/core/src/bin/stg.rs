//! `stg`: soft task grouping pipeline, one subcommand per stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stg_core::cli::{
    cmd_cluster, cmd_eval, cmd_maps, cmd_plot, cmd_record, cmd_specialize, parse_schedule_flag,
    ClusterOptions, ConfigOverrides, EvalTarget, MapSource, PlotTarget, RunConfig,
};
use stg_core::cluster::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use stg_core::toytrain::Split;
use stg_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Mtl,
    Stl,
}

impl From<SourceArg> for MapSource {
    fn from(value: SourceArg) -> Self {
        match value {
            SourceArg::Mtl => MapSource::Mtl,
            SourceArg::Stl => MapSource::Stl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Both,
}

impl SplitArg {
    fn splits(self) -> Vec<Split> {
        match self {
            SplitArg::Train => vec![Split::Train],
            SplitArg::Test => vec![Split::Test],
            SplitArg::Both => vec![Split::Train, Split::Test],
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "stg",
    about = "Soft task grouping for multi-task learning: record training dynamics, \
             build data maps, cluster tasks into soft memberships, train and evaluate \
             specialist ensembles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Parser)]
struct CommonFlags {
    /// Run configuration file (stg-run/1 JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed (also honored via STG_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also honored via STG_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonFlags {
    fn load(&self, extra: ConfigOverrides) -> Result<RunConfig> {
        let overrides = ConfigOverrides {
            seed: self.seed.or(extra.seed),
            out: self.out.clone().or(extra.out),
            ..extra
        };
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the suite and log per-epoch training dynamics (joint MTL
    /// model, or one single-task model per task with --source stl).
    Record {
        #[command(flatten)]
        common: CommonFlags,
        /// Data-map route: one joint run (mtl) or per-task runs (stl).
        #[arg(long, value_enum, default_value = "mtl")]
        source: SourceArg,
    },
    /// Compute the data-map tensor from recorded dynamics.
    Maps {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, value_enum, default_value = "mtl")]
        source: SourceArg,
        /// Snapshot epochs, e.g. "5,10,15"; defaults to the config, then
        /// every 5 epochs.
        #[arg(long)]
        schedule: Option<String>,
        /// External dynamics log to use instead of the recorded mtl log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Cluster task vectors from a single log-derived tensor into soft
    /// memberships (k-means + fuzzification).
    Cluster {
        #[command(flatten)]
        common: CommonFlags,
        /// Tensor file; defaults to the one cmd maps wrote for --source.
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mtl")]
        source: SourceArg,
        /// Number of clusters m.
        #[arg(long)]
        m: Option<usize>,
        /// Fuzzification index (> 1).
        #[arg(long = "F")]
        fuzzification: Option<f64>,
        /// Convergence tolerance on centroid displacement.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Lloyd iteration cap.
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        /// Standardize feature dimensions before clustering.
        #[arg(long)]
        normalize: bool,
        /// Harden memberships to one-hot nearest-centroid rows.
        #[arg(long)]
        hard: bool,
    },
    /// Train one specialist model per cluster with membership-weighted
    /// losses and write the ensemble manifest.
    Specialize {
        #[command(flatten)]
        common: CommonFlags,
        /// Membership file; defaults to the one cmd cluster wrote.
        #[arg(long)]
        memberships: Option<PathBuf>,
    },
    /// Evaluate an ensemble manifest (or a bare checkpoint) with per-task
    /// F1 and macro F1.
    Eval {
        /// Ensemble manifest written by specialize.
        #[arg(long, conflicts_with_all = ["model", "suite"])]
        manifest: Option<PathBuf>,
        /// Bare multi-head checkpoint (plain MTL baseline).
        #[arg(long, requires = "suite")]
        model: Option<PathBuf>,
        /// Suite spec for --model evaluation.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Report directory; defaults next to the manifest/checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot data: data-map scatter CSV or membership bar CSV.
    Plot {
        /// Tensor file for a (variability, confidence) scatter.
        #[arg(long, conflicts_with = "memberships")]
        tensor: Option<PathBuf>,
        /// Task index for the scatter.
        #[arg(long, default_value_t = 0)]
        task: usize,
        /// Snapshot epoch for the scatter; defaults to the last one.
        #[arg(long)]
        epoch: Option<u32>,
        /// Membership file for per-cluster bar data.
        #[arg(long)]
        memberships: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Record { common, source } => {
            let config = common.load(ConfigOverrides::default())?;
            cmd_record(&config, source.into())
        }
        Command::Maps {
            common,
            source,
            schedule,
            log,
        } => {
            let schedule = schedule.as_deref().map(parse_schedule_flag).transpose()?;
            let config = common.load(ConfigOverrides {
                schedule,
                ..ConfigOverrides::default()
            })?;
            cmd_maps(&config, source.into(), log.as_deref())
        }
        Command::Cluster {
            common,
            tensor,
            source,
            m,
            fuzzification,
            tol,
            max_iter,
            normalize,
            hard,
        } => {
            let config = common.load(ConfigOverrides {
                m,
                fuzzification,
                ..ConfigOverrides::default()
            })?;
            let options = ClusterOptions {
                tol,
                max_iter,
                normalize,
                hard,
            };
            cmd_cluster(&config, tensor.as_deref(), source.into(), &options)
        }
        Command::Specialize {
            common,
            memberships,
        } => {
            let config = common.load(ConfigOverrides::default())?;
            cmd_specialize(&config, memberships.as_deref())
        }
        Command::Eval {
            manifest,
            model,
            suite,
            split,
            out,
        } => {
            let target = match (manifest, model, suite) {
                (Some(path), None, None) => EvalTarget::Manifest(path),
                (None, Some(checkpoint), Some(suite)) => EvalTarget::Model { checkpoint, suite },
                _ => {
                    return Err(Error::Argument(
                        "pass either --manifest, or --model with --suite".into(),
                    ))
                }
            };
            cmd_eval(&target, &split.splits(), out.as_deref())?;
            Ok(())
        }
        Command::Plot {
            tensor,
            task,
            epoch,
            memberships,
            out,
        } => {
            let target = match (tensor, memberships) {
                (Some(tensor), None) => PlotTarget::Scatter {
                    tensor,
                    task,
                    epoch,
                },
                (None, Some(memberships)) => PlotTarget::MembershipBars { memberships },
                _ => {
                    return Err(Error::Argument(
                        "pass either --tensor or --memberships".into(),
                    ))
                }
            };
            cmd_plot(&target, out.as_deref())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
