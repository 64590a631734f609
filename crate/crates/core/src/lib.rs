//! Instrumented training for adaptive optimizers: a small autodiff core, a
//! family of update rules behind one interface, and tooling that measures the
//! per-coordinate magnitudes those rules divide by — so the damping constant
//! `eps` can be chosen from evidence instead of folklore.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`graph`], [`model`]: dense rank-1/2 tensors, a define-by-run
//!   tape with reverse-mode gradients, and a ReLU MLP classifier.
//! - [`optim`]: eleven first-order update rules (`sgd` through `adamomentum`)
//!   driven through a shared [`optim::OptimizerState`], with snapshot hooks
//!   exposing each rule's denominator magnitudes.
//! - [`histogram`], [`estimator`]: log-spaced magnitude histograms,
//!   percentile machinery, and the probe that turns one epoch of snapshots
//!   into a decade-rounded `[eps_lower, eps_upper]` working range plus a
//!   regime classification.
//! - [`data`], [`experiment`]: Gaussian-blob and IDX image datasets, batch
//!   scheduling, and reproducible run/grid/report drivers used by the CLI.
//!
//! Everything is deterministic given the seeds in the configs; repeated runs
//! serialize to byte-identical JSON.

pub mod data;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod graph;
pub mod histogram;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use data::{BatchPlan, Dataset};
pub use error::{Error, Result};
pub use estimator::{
    beta2_advice, classify_regime, estimate_eps_range, estimate_from_snapshots,
    estimation_report, recommend_probe_points, round_pow10, suggest_beta2, Beta2Advice,
    EpsilonRange, EstimationReport, ProbeMeta, Regime, RegimeReport,
};
pub use experiment::{
    estimate_injected, estimate_run, grid_from_csv, grid_run, grid_to_csv, hist_dump,
    load_snapshots, report_dir, train_run, write_json, DatasetSpec, GridAxes, GridCell,
    GridResult, OptimizerConfig, Report, RunConfig, RunRecord,
};
pub use graph::Graph;
pub use histogram::{
    build_histogram, fraction_above, percentile, LogMagnitudeHistogram, MagnitudeSnapshot,
};
pub use model::{Mlp, MlpSpec};
pub use optim::{HyperParams, OptimizerState, Rule};
pub use rng::Rng;
pub use tensor::Tensor;
