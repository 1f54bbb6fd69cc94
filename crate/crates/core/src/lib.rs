//! Soft task grouping for multi-task learning.
//!
//! The pipeline: a multi-head trainer records per-epoch true-class
//! probabilities into a dynamics log; data maps (per-point confidence and
//! variability) are extracted from the log at snapshot epochs and
//! flattened into per-task feature vectors; k-means plus a fuzzification
//! step turns those vectors into a row-stochastic membership matrix; the
//! membership columns weight per-task losses when training one specialist
//! model per cluster, and the same memberships combine specialist outputs
//! at inference.
//!
//! Modules follow the pipeline stages:
//! - [`dynamics`]: JSONL log of training dynamics with streaming moments
//! - [`datamap`]: data-map tensors from joint or merged single-task runs
//! - [`cluster`]: task vectors, seeded k-means, fuzzified memberships
//! - [`specialize`]: weighted losses, specialist ensembles, evaluation
//! - [`toytrain`]: the built-in desk-scale trainer and synthetic suites
//! - [`metrics`]: F1, macro F1, grouping agreement
//! - [`cli`]: the command surface wiring the stages end to end

pub mod cli;
pub mod cluster;
pub mod datamap;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod specialize;
pub mod toytrain;

pub use error::{Error, Result};
