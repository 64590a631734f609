//! Reproducible experiment drivers: single training runs, hyperparameter
//! grids, histogram capture schedules, and directory-level report rollups.
//!
//! Everything here is a pure function of its config: given the same
//! `RunConfig`, a run produces byte-identical JSON (wall time is measured but
//! deliberately kept out of the serialized record).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, load_idx, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_eps_range, estimate_from_snapshots, estimation_report, EstimationReport, ProbeMeta,
};
use crate::histogram::{build_histogram, fraction_above, LogMagnitudeHistogram, MagnitudeSnapshot};
use crate::model::{Mlp, MlpSpec};
use crate::optim::{HyperParams, OptimizerState, Rule};

/// Where the training examples come from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs, one center per class. Features are z-scored
    /// with statistics fit on the training split.
    Blobs {
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        seed: u64,
        /// Held-out sample count; 0 means no test split.
        #[serde(default)]
        test_n: usize,
    },
    /// Big-endian IDX image/label pairs; pixels are mapped to [0, 1] at load.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        /// Cap on training samples (whole set when absent or larger).
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

/// Update rule plus its hyperparameters, flattened so configs read naturally:
/// `{"rule": "adam", "alpha": 1e-3, "eps": 1e-8}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    pub rule: Rule,
    #[serde(flatten)]
    pub hp: HyperParams,
}

/// Complete description of one training run. A run is a pure function of
/// this struct: same config, same `RunRecord` bytes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Full layer widths, input through output; must match the dataset's
    /// feature count and class count.
    pub widths: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds model init (stream 0) and per-epoch batch shuffles (stream e+1).
    pub seed: u64,
    /// Drop the final short batch of each epoch instead of padding the plan.
    #[serde(default)]
    pub drop_last: bool,
    /// Capture magnitude histograms every k optimizer steps; 0 disables.
    #[serde(default)]
    pub capture_every: u64,
    /// Where run artifacts (run.json, histogram CSVs) are written; in-memory
    /// only when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Blobs { n, classes, dim, spread, .. } => {
                if *n == 0 || *classes == 0 {
                    return Err(Error::Config("blobs need n >= 1 and classes >= 1".into()));
                }
                if dim < classes {
                    return Err(Error::Config(format!(
                        "blobs need dim >= classes, got dim={dim} classes={classes}"
                    )));
                }
                if !spread.is_finite() || *spread < 0.0 {
                    return Err(Error::Config(format!("blob spread must be finite and >= 0, got {spread}")));
                }
            }
            DatasetSpec::Idx { .. } => {}
        }
        MlpSpec { widths: self.widths.clone(), seed: self.seed }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.optimizer
            .hp
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Metrics for one completed epoch (epoch numbers are 1-based).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// One captured histogram: which variable, when, the binned magnitudes, and
/// how much mass sat above the run's eps at that moment.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CaptureRecord {
    pub epoch: u64,
    pub iteration: u64,
    pub variable_id: String,
    pub histogram: LogMagnitudeHistogram,
    pub fraction_above_eps: f64,
    /// Histogram CSV filename relative to the run directory, when written.
    pub csv_file: Option<String>,
}

/// Everything a finished run reports. Serializes deterministically; the wall
/// clock is kept out of the JSON so records stay comparable byte-for-byte.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub rule: Rule,
    pub hyperparams: HyperParams,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub batches_per_epoch: usize,
    pub epochs: Vec<EpochMetrics>,
    pub captures: Vec<CaptureRecord>,
    /// SHA-256 of the final parameters, for cheap reproducibility checks.
    pub final_params_digest: String,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// Best accuracy across epochs (test when available, train otherwise)
    /// and the 1-based epoch that reached it first.
    pub fn best_metric(&self) -> (f64, u64) {
        let mut best = f64::NEG_INFINITY;
        let mut at = 0;
        for e in &self.epochs {
            let m = e.test_accuracy.unwrap_or(e.train_accuracy);
            if m > best {
                best = m;
                at = e.epoch;
            }
        }
        (best, at)
    }
}

/// Load, normalize, and split per the dataset spec. Returns (train, test).
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Dataset, Option<Dataset>)> {
    match spec {
        DatasetSpec::Blobs { n, classes, dim, spread, seed, test_n } => {
            let train = gen_blobs(*n, *classes, *dim, *spread, *seed)?;
            let test = if *test_n > 0 {
                Some(gen_blobs(*test_n, *classes, *dim, *spread, seed.wrapping_add(1))?)
            } else {
                None
            };
            let (train, stats) = train.zscore()?;
            let test = match test {
                Some(t) => Some(t.zscore_with(&stats)?),
                None => None,
            };
            Ok((train, test))
        }
        DatasetSpec::Idx { images, labels, test_images, test_labels, limit, test_limit } => {
            let mut train = load_idx(images, labels)?;
            if let Some(k) = limit {
                train = train.take((*k).min(train.len()))?;
            }
            let test = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut t = load_idx(ti, tl)?;
                    if let Some(k) = test_limit {
                        t = t.take((*k).min(t.len()))?;
                    }
                    Some(t)
                }
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "test_images and test_labels must be given together".into(),
                    ))
                }
            };
            Ok((train, test))
        }
    }
}

fn check_split_shapes(config: &RunConfig, train: &Dataset, test: Option<&Dataset>) -> Result<()> {
    if config.widths[0] != train.dim() {
        return Err(Error::Config(format!(
            "input width {} does not match {} dataset features",
            config.widths[0],
            train.dim()
        )));
    }
    if *config.widths.last().unwrap() != train.class_count {
        return Err(Error::Config(format!(
            "output width {} does not match {} classes",
            config.widths.last().unwrap(),
            train.class_count
        )));
    }
    if let Some(t) = test {
        if t.dim() != train.dim() || t.class_count > train.class_count {
            return Err(Error::Consistency(format!(
                "test split shape [{} x {}] ({} classes) does not match train [{} x {}] ({} classes)",
                t.len(),
                t.dim(),
                t.class_count,
                train.len(),
                train.dim(),
                train.class_count
            )));
        }
    }
    Ok(())
}

/// Stamp training-loop position onto numeric failures so aborts read like
/// "iteration 42, epoch 3: non-finite update for variable w1 ...".
fn at_iteration(err: Error, iteration: u64, epoch: u64) -> Error {
    match err {
        Error::Numeric(m) => Error::Numeric(format!("iteration {iteration}, epoch {epoch}: {m}")),
        other => other,
    }
}

/// Train per the config. Writes `run.json` plus histogram CSVs into
/// `config.out_dir` when set.
pub fn train_run(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let (train, test) = load_dataset(&config.dataset)?;
    check_split_shapes(config, &train, test.as_ref())?;

    let mut model = Mlp::new(MlpSpec { widths: config.widths.clone(), seed: config.seed })?;
    let plan = BatchPlan {
        batch_size: config.batch_size,
        seed: config.seed,
        drop_last: config.drop_last,
    };
    let batches_per_epoch = plan.batches_per_epoch(train.len())?;
    if batches_per_epoch == 0 {
        return Err(Error::Config(
            "drop_last removed every batch; lower batch_size or add data".into(),
        ));
    }
    let mut state = OptimizerState::new(config.optimizer.rule, model.params(), config.optimizer.hp)?;
    state.set_names(model.param_names())?;

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut captures: Vec<CaptureRecord> = Vec::new();
    for epoch in 1..=config.epochs as u64 {
        for batch in plan.batches(train.len(), epoch - 1)? {
            let (x, y) = train.select(&batch)?;
            let (_, grads) = model
                .loss_and_grads(&x, &y)
                .map_err(|e| at_iteration(e, state.t() + 1, epoch))?;
            state
                .step(model.params_mut(), &grads)
                .map_err(|e| at_iteration(e, state.t() + 1, epoch))?;
            if config.capture_every > 0 && state.t() % config.capture_every == 0 {
                for snap in state.magnitude_snapshots(epoch)? {
                    let histogram = build_histogram(&snap)?;
                    let frac = fraction_above(&snap.values, config.optimizer.hp.eps)?;
                    let csv_file = match &config.out_dir {
                        Some(dir) => {
                            let name =
                                format!("hist_{}_{:06}.csv", snap.variable_id, snap.iteration);
                            fs::write(dir.join(&name), histogram.to_csv())?;
                            Some(name)
                        }
                        None => None,
                    };
                    captures.push(CaptureRecord {
                        epoch: snap.epoch,
                        iteration: snap.iteration,
                        variable_id: snap.variable_id,
                        histogram,
                        fraction_above_eps: frac,
                        csv_file,
                    });
                }
            }
        }
        let (train_loss, train_accuracy) = model.metrics(&train.features, &train.labels)?;
        let (test_loss, test_accuracy) = match &test {
            Some(t) => {
                let (l, a) = model.metrics(&t.features, &t.labels)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        epochs.push(EpochMetrics { epoch, train_loss, train_accuracy, test_loss, test_accuracy });
    }

    let record = RunRecord {
        rule: config.optimizer.rule,
        hyperparams: config.optimizer.hp,
        seed: config.seed,
        widths: config.widths.clone(),
        batches_per_epoch,
        epochs,
        captures,
        final_params_digest: model.params_digest(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &config.out_dir {
        write_json(&dir.join("run.json"), &record)?;
        write_captures_csv(&dir.join("captures.csv"), &record.captures)?;
    }
    Ok(record)
}

/// Train with a forced capture cadence: histogram CSVs every `every_k` steps.
pub fn hist_dump(config: &RunConfig, every_k: u64) -> Result<RunRecord> {
    if every_k == 0 {
        return Err(Error::contract("capture cadence must be >= 1 step".into()));
    }
    let mut cfg = config.clone();
    cfg.capture_every = every_k;
    train_run(&cfg)
}

/// Probe one epoch per the config and assemble the eps estimation report.
pub fn estimate_run(config: &RunConfig) -> Result<EstimationReport> {
    config.validate()?;
    let (train, _) = load_dataset(&config.dataset)?;
    check_split_shapes(config, &train, None)?;
    let mut model = Mlp::new(MlpSpec { widths: config.widths.clone(), seed: config.seed })?;
    let plan = BatchPlan {
        batch_size: config.batch_size,
        seed: config.seed,
        drop_last: config.drop_last,
    };
    let (range, snapshots) =
        estimate_eps_range(config.optimizer.rule, config.optimizer.hp, &mut model, &train, &plan)?;
    estimation_report(range, &snapshots)
}

/// Estimate directly from externally supplied snapshots (no training),
/// taking rule/hyperparameters/seed from the config.
pub fn estimate_injected(
    config: &RunConfig,
    snapshots: &[MagnitudeSnapshot],
) -> Result<EstimationReport> {
    let t_per_epoch = snapshots.iter().map(|s| s.iteration).max().unwrap_or(0);
    let probe = ProbeMeta {
        rule: config.optimizer.rule,
        hyperparams: config.optimizer.hp,
        t_per_epoch,
        steps_performed: 0,
        seed: config.seed,
    };
    let range = estimate_from_snapshots(snapshots, probe)?;
    estimation_report(range, snapshots)
}

/// Read a JSON array of magnitude snapshots, e.g. for injected estimation.
pub fn load_snapshots(path: &Path) -> Result<Vec<MagnitudeSnapshot>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// The swept hyperparameter values. Cells are enumerated alphas x epsilons x
/// beta2s with beta2 varying fastest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridAxes {
    pub alphas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub beta2s: Vec<f64>,
}

impl GridAxes {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.epsilons.is_empty() || self.beta2s.is_empty() {
            return Err(Error::contract("every grid axis needs at least one value".into()));
        }
        for &a in &self.alphas {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::Config(format!("grid alpha must be finite and > 0, got {a}")));
            }
        }
        for &e in &self.epsilons {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::Config(format!("grid eps must be finite and >= 0, got {e}")));
            }
        }
        for &b in &self.beta2s {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("grid beta2 must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.alphas.len() * self.epsilons.len() * self.beta2s.len());
        for &a in &self.alphas {
            for &e in &self.epsilons {
                for &b in &self.beta2s {
                    out.push((a, e, b));
                }
            }
        }
        out
    }
}

/// One completed grid cell: the swept values and the best epoch metric.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridCell {
    pub alpha: f64,
    pub epsilon: f64,
    pub beta2: f64,
    pub best_metric: f64,
    pub best_epoch: u64,
}

/// A cell whose run aborted; the grid keeps going and records why.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridFailure {
    pub alpha: f64,
    pub epsilon: f64,
    pub beta2: f64,
    pub error: String,
}

/// Full sweep outcome: axes, one record per finished cell (enumeration
/// order), and any per-cell failures.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridResult {
    pub axes: GridAxes,
    pub cells: Vec<GridCell>,
    pub failures: Vec<GridFailure>,
}

impl GridResult {
    /// Highest-metric cell, ties to the earliest in enumeration order.
    pub fn best_cell(&self) -> Option<&GridCell> {
        let mut best: Option<&GridCell> = None;
        for c in &self.cells {
            if best.map_or(true, |b| c.best_metric > b.best_metric) {
                best = Some(c);
            }
        }
        best
    }
}

/// Run one training job per axes cell, all from the same base config and
/// seed. Cell failures are recorded, not fatal; `workers` caps the thread
/// pool (0 picks a sensible default). The result is independent of worker
/// count and execution order.
pub fn grid_run(base: &RunConfig, axes: &GridAxes, workers: usize) -> Result<GridResult> {
    axes.validate()?;
    base.validate()?;
    let cells = axes.cells();
    let n = cells.len();
    let workers = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |p| p.get()).min(n)
    } else {
        workers.min(n)
    };
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<std::result::Result<GridCell, String>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let (alpha, epsilon, beta2) = cells[i];
                let mut cfg = base.clone();
                cfg.out_dir = None;
                cfg.capture_every = 0;
                cfg.optimizer.hp.alpha = alpha;
                cfg.optimizer.hp.eps = epsilon;
                cfg.optimizer.hp.beta2 = beta2;
                let outcome = train_run(&cfg)
                    .map(|rec| {
                        let (best_metric, best_epoch) = rec.best_metric();
                        GridCell { alpha, epsilon, beta2, best_metric, best_epoch }
                    })
                    .map_err(|e| e.to_string());
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    let mut out = GridResult { axes: axes.clone(), cells: Vec::new(), failures: Vec::new() };
    for (i, slot) in slots.into_iter().enumerate() {
        let (alpha, epsilon, beta2) = cells[i];
        match slot.into_inner().unwrap() {
            Some(Ok(cell)) => out.cells.push(cell),
            Some(Err(error)) => out.failures.push(GridFailure { alpha, epsilon, beta2, error }),
            None => out.failures.push(GridFailure {
                alpha,
                epsilon,
                beta2,
                error: "cell was never executed".into(),
            }),
        }
    }
    Ok(out)
}

fn fmt_axis(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

fn parse_axis(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad axis value {tok:?} in grid CSV")))
        })
        .collect()
}

const GRID_HEADER: &str = "alpha,epsilon,beta2,best_metric,best_epoch";

/// Render a grid as CSV: `#` comment lines carry the axes and any failures,
/// then one row per cell. `grid_from_csv` inverts this exactly.
pub fn grid_to_csv(grid: &GridResult) -> String {
    let mut out = String::new();
    out.push_str(&format!("# alphas {}\n", fmt_axis(&grid.axes.alphas)));
    out.push_str(&format!("# epsilons {}\n", fmt_axis(&grid.axes.epsilons)));
    out.push_str(&format!("# beta2s {}\n", fmt_axis(&grid.axes.beta2s)));
    for f in &grid.failures {
        out.push_str(&format!(
            "# failure alpha={:e} epsilon={:e} beta2={:e} error={}\n",
            f.alpha,
            f.epsilon,
            f.beta2,
            serde_json::to_string(&f.error).expect("strings always serialize"),
        ));
    }
    out.push_str(GRID_HEADER);
    out.push('\n');
    for c in &grid.cells {
        out.push_str(&format!(
            "{:e},{:e},{:e},{:e},{}\n",
            c.alpha, c.epsilon, c.beta2, c.best_metric, c.best_epoch
        ));
    }
    out
}

fn parse_scalar(tok: &str, what: &str) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("bad {what} value {tok:?} in grid CSV")))
}

/// Parse the `grid_to_csv` format back into a `GridResult`.
pub fn grid_from_csv(text: &str) -> Result<GridResult> {
    let mut alphas = None;
    let mut epsilons = None;
    let mut beta2s = None;
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# alphas ") {
            alphas = Some(parse_axis(rest)?);
        } else if let Some(rest) = line.strip_prefix("# epsilons ") {
            epsilons = Some(parse_axis(rest)?);
        } else if let Some(rest) = line.strip_prefix("# beta2s ") {
            beta2s = Some(parse_axis(rest)?);
        } else if let Some(rest) = line.strip_prefix("# failure ") {
            failures.push(parse_failure(rest)?);
        } else if line == GRID_HEADER {
            saw_header = true;
        } else if line.trim().is_empty() {
            continue;
        } else {
            if !saw_header {
                return Err(Error::Format(format!("unexpected grid CSV line before header: {line:?}")));
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Format(format!("grid CSV row needs 5 columns, got {}", cols.len())));
            }
            cells.push(GridCell {
                alpha: parse_scalar(cols[0], "alpha")?,
                epsilon: parse_scalar(cols[1], "epsilon")?,
                beta2: parse_scalar(cols[2], "beta2")?,
                best_metric: parse_scalar(cols[3], "best_metric")?,
                best_epoch: cols[4]
                    .trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Format(format!("bad best_epoch {:?} in grid CSV", cols[4])))?,
            });
        }
    }
    if !saw_header {
        return Err(Error::Format("grid CSV has no header row".into()));
    }
    let axes = GridAxes {
        alphas: alphas.ok_or_else(|| Error::Format("grid CSV missing '# alphas' line".into()))?,
        epsilons: epsilons.ok_or_else(|| Error::Format("grid CSV missing '# epsilons' line".into()))?,
        beta2s: beta2s.ok_or_else(|| Error::Format("grid CSV missing '# beta2s' line".into()))?,
    };
    Ok(GridResult { axes, cells, failures })
}

fn parse_failure(rest: &str) -> Result<GridFailure> {
    let bad = |msg: &str| Error::Format(format!("bad failure line in grid CSV: {msg}"));
    let mut parts = rest.splitn(4, ' ');
    let mut grab = |prefix: &str| -> Result<f64> {
        let tok = parts.next().ok_or_else(|| bad("too few fields"))?;
        let val = tok
            .strip_prefix(prefix)
            .ok_or_else(|| bad(&format!("expected {prefix}...")))?;
        parse_scalar(val, prefix.trim_end_matches('='))
    };
    let alpha = grab("alpha=")?;
    let epsilon = grab("epsilon=")?;
    let beta2 = grab("beta2=")?;
    let tail = parts.next().ok_or_else(|| bad("missing error field"))?;
    let json = tail.strip_prefix("error=").ok_or_else(|| bad("expected error=..."))?;
    let error: String = serde_json::from_str(json).map_err(|_| bad("unparseable error string"))?;
    Ok(GridFailure { alpha, epsilon, beta2, error })
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_captures_csv(path: &Path, captures: &[CaptureRecord]) -> Result<()> {
    let mut out =
        String::from("epoch,iteration,variable_id,zeros,underflow,overflow,fraction_above_eps,csv_file\n");
    for c in captures {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:e},{}\n",
            c.epoch,
            c.iteration,
            c.variable_id,
            c.histogram.zeros,
            c.histogram.underflow,
            c.histogram.overflow,
            c.fraction_above_eps,
            c.csv_file.as_deref().unwrap_or(""),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Summary of one run.json found by the report scan.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub file: String,
    pub rule: Rule,
    pub epochs: usize,
    pub best_metric: f64,
    pub best_epoch: u64,
    pub final_train_loss: f64,
    pub has_test_split: bool,
}

/// Summary of one grid.csv found by the report scan.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridSummary {
    pub file: String,
    pub cells: usize,
    pub failures: usize,
    pub best: Option<GridCell>,
}

/// Summary of one estimate.json found by the report scan.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimateSummary {
    pub file: String,
    pub rule: Rule,
    pub eps_lower: f64,
    pub eps_upper: f64,
    pub regime_at_lower: crate::estimator::Regime,
    pub regime_at_upper: crate::estimator::Regime,
    pub probe_points: Vec<f64>,
    pub suggested_beta2: f64,
}

/// A concrete (eps, alpha) suggestion: an estimator probe point paired with
/// the best grid cell found at that eps, when any grid has one.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RecommendedPair {
    pub eps: f64,
    pub alpha: Option<f64>,
    pub metric: Option<f64>,
    pub estimate_file: String,
    pub grid_file: Option<String>,
}

/// A file the scan recognized but could not parse. Never fatal.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileIssue {
    pub file: String,
    pub error: String,
}

/// Directory-level rollup of runs, grids, and estimates.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub grids: Vec<GridSummary>,
    pub estimates: Vec<EstimateSummary>,
    pub recommendations: Vec<RecommendedPair>,
    pub issues: Vec<FileIssue>,
}

fn walk_sorted(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            walk_sorted(&path, root, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .map(|p| p.to_string_lossy().into_owned())
                .unwrap_or_else(|_| path.to_string_lossy().into_owned());
            out.push((rel, path));
        }
    }
    Ok(())
}

/// Scan a directory tree for run.json / grid.csv / estimate.json artifacts
/// and roll them up. Corrupt artifacts are listed as issues, never fatal.
pub fn report_dir(dir: &Path) -> Result<Report> {
    let mut files = Vec::new();
    walk_sorted(dir, dir, &mut files)?;
    let mut report = Report::default();
    let mut loaded_grids: Vec<(String, GridResult)> = Vec::new();
    for (rel, path) in files {
        let base = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        match base {
            "run.json" => match fs::read_to_string(&path)
                .map_err(Error::from)
                .and_then(|t| Ok(serde_json::from_str::<RunRecord>(&t)?))
            {
                Ok(rec) => {
                    let (best_metric, best_epoch) = rec.best_metric();
                    report.runs.push(RunSummary {
                        file: rel,
                        rule: rec.rule,
                        epochs: rec.epochs.len(),
                        best_metric,
                        best_epoch,
                        final_train_loss: rec.epochs.last().map_or(f64::NAN, |e| e.train_loss),
                        has_test_split: rec.epochs.iter().any(|e| e.test_accuracy.is_some()),
                    });
                }
                Err(e) => report.issues.push(FileIssue { file: rel, error: e.to_string() }),
            },
            "grid.csv" => match fs::read_to_string(&path)
                .map_err(Error::from)
                .and_then(|t| grid_from_csv(&t))
            {
                Ok(grid) => {
                    report.grids.push(GridSummary {
                        file: rel.clone(),
                        cells: grid.cells.len(),
                        failures: grid.failures.len(),
                        best: grid.best_cell().cloned(),
                    });
                    loaded_grids.push((rel, grid));
                }
                Err(e) => report.issues.push(FileIssue { file: rel, error: e.to_string() }),
            },
            "estimate.json" => match fs::read_to_string(&path)
                .map_err(Error::from)
                .and_then(|t| Ok(serde_json::from_str::<EstimationReport>(&t)?))
            {
                Ok(est) => report.estimates.push(EstimateSummary {
                    file: rel,
                    rule: est.range.probe.rule,
                    eps_lower: est.range.eps_lower,
                    eps_upper: est.range.eps_upper,
                    regime_at_lower: est.regime_at_lower.classification,
                    regime_at_upper: est.regime_at_upper.classification,
                    probe_points: est.probe_points.clone(),
                    suggested_beta2: est.beta2_advice.suggested_beta2,
                }),
                Err(e) => report.issues.push(FileIssue { file: rel, error: e.to_string() }),
            },
            _ => {}
        }
    }
    report.recommendations = recommend_pairs(&report.estimates, &loaded_grids);
    Ok(report)
}

/// Pair each estimate's probe points with the best grid alpha at that eps.
/// The two-point recommendation stands even when no grid covers a point;
/// alpha is simply absent there.
fn recommend_pairs(
    estimates: &[EstimateSummary],
    grids: &[(String, GridResult)],
) -> Vec<RecommendedPair> {
    let mut out = Vec::new();
    for est in estimates {
        for &eps in &est.probe_points {
            let mut best: Option<(&str, &GridCell)> = None;
            for (file, grid) in grids {
                for cell in grid.cells.iter().filter(|c| c.epsilon == eps) {
                    if best.map_or(true, |(_, b)| cell.best_metric > b.best_metric) {
                        best = Some((file, cell));
                    }
                }
            }
            out.push(RecommendedPair {
                eps,
                alpha: best.map(|(_, c)| c.alpha),
                metric: best.map(|(_, c)| c.best_metric),
                estimate_file: est.file.clone(),
                grid_file: best.map(|(f, _)| f.to_string()),
            });
        }
    }
    out
}

impl Report {
    /// Human-readable rendering of the rollup.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("runs: {}\n", self.runs.len()));
        for r in &self.runs {
            s.push_str(&format!(
                "  {}  rule={} epochs={} best={:.4} @ epoch {}{}\n",
                r.file,
                r.rule,
                r.epochs,
                r.best_metric,
                r.best_epoch,
                if r.has_test_split { " (test)" } else { " (train)" },
            ));
        }
        s.push_str(&format!("grids: {}\n", self.grids.len()));
        for g in &self.grids {
            match &g.best {
                Some(b) => s.push_str(&format!(
                    "  {}  cells={} failures={} best: alpha={:e} eps={:e} beta2={:e} metric={:.4} @ epoch {}\n",
                    g.file, g.cells, g.failures, b.alpha, b.epsilon, b.beta2, b.best_metric, b.best_epoch
                )),
                None => s.push_str(&format!(
                    "  {}  cells={} failures={} (no completed cells)\n",
                    g.file, g.cells, g.failures
                )),
            }
        }
        s.push_str(&format!("estimates: {}\n", self.estimates.len()));
        for e in &self.estimates {
            s.push_str(&format!(
                "  {}  rule={} range=[{:e}, {:e}] regimes: lower={} upper={} suggested beta2 >= {:.6}\n",
                e.file, e.rule, e.eps_lower, e.eps_upper, e.regime_at_lower, e.regime_at_upper, e.suggested_beta2
            ));
        }
        s.push_str(&format!("recommendations: {}\n", self.recommendations.len()));
        for p in &self.recommendations {
            match (p.alpha, p.metric) {
                (Some(a), Some(m)) => s.push_str(&format!(
                    "  eps={:e} alpha={:e} metric={:.4}  ({} + {})\n",
                    p.eps,
                    a,
                    m,
                    p.estimate_file,
                    p.grid_file.as_deref().unwrap_or("?")
                )),
                _ => s.push_str(&format!(
                    "  eps={:e} alpha=?  ({}; no grid cell at this eps)\n",
                    p.eps, p.estimate_file
                )),
            }
        }
        s.push_str(&format!("issues: {}\n", self.issues.len()));
        for i in &self.issues {
            s.push_str(&format!("  {}  {}\n", i.file, i.error));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::Regime;

    fn tmp_dir(tag: &str) -> PathBuf {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let d = std::env::temp_dir().join(format!(
            "optscope-exp-{}-{}-{}",
            std::process::id(),
            tag,
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn blob_config(
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
        widths: &[usize],
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> RunConfig {
        RunConfig {
            dataset: DatasetSpec::Blobs { n, classes, dim, spread, seed, test_n: 0 },
            widths: widths.to_vec(),
            optimizer: OptimizerConfig { rule: Rule::Adam, hp: HyperParams::default() },
            epochs,
            batch_size,
            seed,
            drop_last: false,
            capture_every: 0,
            out_dir: None,
        }
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknowns() {
        let cfg = blob_config(100, 3, 4, 0.5, &[4, 8, 3], 2, 16, 5);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        // A typo'd top-level key must not be silently dropped.
        let poked = text.replacen("\"epochs\"", "\"epochz\"", 1);
        assert!(serde_json::from_str::<RunConfig>(&poked).is_err());
    }

    #[test]
    fn config_validation_catches_bad_shapes_and_counts() {
        let mut cfg = blob_config(100, 3, 4, 0.5, &[4, 8, 3], 2, 16, 5);
        cfg.epochs = 0;
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config(_)));
        let mut cfg = blob_config(100, 3, 4, 0.5, &[4, 8, 3], 2, 16, 5);
        cfg.batch_size = 0;
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config(_)));
        // dim < classes has no blob geometry.
        let cfg = blob_config(100, 5, 4, 0.5, &[4, 8, 5], 2, 16, 5);
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config(_)));
        // Widths that disagree with the dataset fail at run time.
        let cfg = blob_config(100, 3, 4, 0.5, &[5, 8, 3], 2, 16, 5);
        assert!(matches!(train_run(&cfg).unwrap_err(), Error::Config(_)));
        let cfg = blob_config(100, 3, 4, 0.5, &[4, 8, 2], 2, 16, 5);
        assert!(matches!(train_run(&cfg).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn separable_blobs_reach_full_train_accuracy() {
        // spread 0 collapses every class onto its center: three distinct
        // points, linearly separable, so the net must fit them exactly.
        let cfg = blob_config(240, 3, 4, 0.0, &[4, 16, 3], 5, 4, 7);
        let rec = train_run(&cfg).unwrap();
        assert_eq!(rec.epochs.len(), 5);
        assert_eq!(rec.epochs.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn repeat_runs_serialize_identically() {
        let mut cfg = blob_config(200, 3, 6, 0.5, &[6, 12, 3], 2, 32, 11);
        cfg.dataset = DatasetSpec::Blobs { n: 200, classes: 3, dim: 6, spread: 0.5, seed: 11, test_n: 60 };
        cfg.capture_every = 3;
        let a = train_run(&cfg).unwrap();
        let b = train_run(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.final_params_digest, b.final_params_digest);
        assert!(a.epochs.iter().all(|e| e.test_accuracy.is_some()));
    }

    #[test]
    fn adam_fits_noisy_blobs_past_95_percent() {
        let cfg = blob_config(2000, 4, 16, 0.3, &[16, 32, 4], 10, 64, 11);
        let rec = train_run(&cfg).unwrap();
        let (best, _) = rec.best_metric();
        assert!(best >= 0.95, "best train accuracy {best} below 0.95");
    }

    #[test]
    fn numeric_abort_names_the_iteration() {
        let mut cfg = blob_config(120, 3, 4, 0.3, &[4, 8, 3], 2, 32, 3);
        cfg.optimizer.rule = Rule::Sgd;
        cfg.optimizer.hp.alpha = 1e300;
        let err = train_run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let msg = err.to_string();
        assert!(matches!(err, Error::Numeric(_)), "unexpected error {msg}");
        assert!(msg.contains("iteration"), "diagnostic lacks position: {msg}");
    }

    #[test]
    fn single_cell_grid_matches_a_plain_run() {
        let cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 2, 32, 9);
        let axes = GridAxes {
            alphas: vec![cfg.optimizer.hp.alpha],
            epsilons: vec![cfg.optimizer.hp.eps],
            beta2s: vec![cfg.optimizer.hp.beta2],
        };
        let grid = grid_run(&cfg, &axes, 1).unwrap();
        assert_eq!(grid.cells.len(), 1);
        assert!(grid.failures.is_empty());
        let rec = train_run(&cfg).unwrap();
        let (best, at) = rec.best_metric();
        assert_eq!(grid.cells[0].best_metric, best);
        assert_eq!(grid.cells[0].best_epoch, at);
    }

    #[test]
    fn grid_enumerates_cells_in_axis_order() {
        let cfg = blob_config(120, 3, 4, 0.4, &[4, 8, 3], 1, 64, 2);
        let axes = GridAxes {
            alphas: vec![1e-3, 1e-2, 1e-1],
            epsilons: vec![1e-8, 1e-4, 1e-2],
            beta2s: vec![0.999],
        };
        let grid = grid_run(&cfg, &axes, 2).unwrap();
        assert!(grid.failures.is_empty());
        assert_eq!(grid.cells.len(), 9);
        let mut expected = Vec::new();
        for &a in &axes.alphas {
            for &e in &axes.epsilons {
                expected.push((a, e, 0.999));
            }
        }
        let got: Vec<(f64, f64, f64)> =
            grid.cells.iter().map(|c| (c.alpha, c.epsilon, c.beta2)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn grid_content_is_worker_count_independent() {
        let cfg = blob_config(120, 3, 4, 0.4, &[4, 8, 3], 1, 64, 2);
        let axes =
            GridAxes { alphas: vec![1e-3, 1e-2], epsilons: vec![1e-8, 1e-4], beta2s: vec![0.999] };
        let serial = grid_run(&cfg, &axes, 1).unwrap();
        let parallel = grid_run(&cfg, &axes, 4).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn failing_cells_are_recorded_and_the_grid_continues() {
        let mut cfg = blob_config(120, 3, 4, 0.4, &[4, 8, 3], 2, 32, 2);
        cfg.optimizer.rule = Rule::Sgd;
        let axes =
            GridAxes { alphas: vec![1e-2, 1e300], epsilons: vec![1e-8], beta2s: vec![0.999] };
        let grid = grid_run(&cfg, &axes, 2).unwrap();
        assert_eq!(grid.cells.len(), 1);
        assert_eq!(grid.cells[0].alpha, 1e-2);
        assert_eq!(grid.failures.len(), 1);
        assert_eq!(grid.failures[0].alpha, 1e300);
        assert!(grid.failures[0].error.contains("iteration"));
    }

    #[test]
    fn heatmap_csv_round_trips_exactly() {
        let mut cfg = blob_config(120, 3, 4, 0.4, &[4, 8, 3], 2, 32, 2);
        cfg.optimizer.rule = Rule::Sgd;
        let axes =
            GridAxes { alphas: vec![1e-2, 1e300], epsilons: vec![1e-8, 1e-4], beta2s: vec![0.999] };
        let grid = grid_run(&cfg, &axes, 2).unwrap();
        assert!(!grid.failures.is_empty(), "test needs at least one failure row");
        let text = grid_to_csv(&grid);
        let back = grid_from_csv(&text).unwrap();
        assert_eq!(back, grid);
        // Header and value formatting are part of the contract.
        assert!(text.contains("alpha,epsilon,beta2,best_metric,best_epoch"));
        assert!(grid_from_csv("no header at all\n").is_err());
    }

    #[test]
    fn capture_cadence_of_one_epoch_captures_once_per_epoch() {
        let cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 3, 32, 6);
        let plan = BatchPlan { batch_size: 32, seed: 6, drop_last: false };
        let t = plan.batches_per_epoch(160).unwrap() as u64;
        let rec = hist_dump(&cfg, t).unwrap();
        // 4 variables (w1, b1, w2, b2) captured exactly once per epoch.
        assert_eq!(rec.captures.len(), 3 * 4);
        for c in &rec.captures {
            assert_eq!(c.iteration % t, 0);
            assert_eq!(c.epoch, c.iteration / t);
        }
        assert!(matches!(hist_dump(&cfg, 0).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn fraction_above_tracks_the_eps_threshold() {
        // eps far above every magnitude: nothing is adaptive.
        let mut cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 2, 32, 6);
        cfg.optimizer.hp.eps = 1e12;
        let rec = hist_dump(&cfg, 5).unwrap();
        assert!(!rec.captures.is_empty());
        assert!(rec.captures.iter().all(|c| c.fraction_above_eps == 0.0));
        // eps 0: the fraction is exactly the nonzero share.
        let mut cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 2, 32, 6);
        cfg.optimizer.hp.eps = 0.0;
        let rec = hist_dump(&cfg, 5).unwrap();
        for c in &rec.captures {
            let total = c.histogram.total();
            let nonzero = (total - c.histogram.zeros) as f64 / total as f64;
            assert_eq!(c.fraction_above_eps, nonzero);
            assert!(c.fraction_above_eps > 0.0);
        }
    }

    #[test]
    fn scaling_alpha_and_eps_together_leaves_frozen_runs_unchanged() {
        // With eps far above every adaptive magnitude the step collapses to
        // (alpha/eps) * momentum, so (alpha, eps) and (10 alpha, 10 eps)
        // land on matching metrics.
        let cfg = blob_config(400, 4, 8, 0.4, &[8, 16, 4], 2, 32, 13);
        let mut pilot = cfg.clone();
        pilot.capture_every = 1;
        let rec = train_run(&pilot).unwrap();
        let mut zmax = 0.0f64;
        for c in &rec.captures {
            assert_eq!(c.histogram.overflow, 0);
            for (i, &count) in c.histogram.counts.iter().enumerate() {
                if count > 0 {
                    zmax = zmax.max(c.histogram.bin_edges[i + 1]);
                }
            }
        }
        assert!(zmax > 0.0);
        let eps0 = 1e5 * zmax;
        let axes = GridAxes {
            alphas: vec![1e-3, 1e-2],
            epsilons: vec![eps0, 10.0 * eps0],
            beta2s: vec![cfg.optimizer.hp.beta2],
        };
        let grid = grid_run(&cfg, &axes, 2).unwrap();
        assert!(grid.failures.is_empty());
        let find = |a: f64, e: f64| {
            grid.cells
                .iter()
                .find(|c| c.alpha == a && c.epsilon == e)
                .expect("cell present")
                .best_metric
        };
        let low = find(1e-3, eps0);
        let high = find(1e-2, 10.0 * eps0);
        assert!(
            (low - high).abs() <= 0.005,
            "diagonal cells differ: {low} vs {high}"
        );
    }

    #[test]
    fn estimate_run_is_deterministic() {
        let cfg = blob_config(200, 3, 6, 0.4, &[6, 12, 3], 1, 32, 17);
        let a = estimate_run(&cfg).unwrap();
        let b = estimate_run(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.range.eps_lower <= a.range.eps_upper);
    }

    #[test]
    fn report_on_an_empty_dir_is_empty() {
        let dir = tmp_dir("empty");
        let rep = report_dir(&dir).unwrap();
        assert_eq!(rep, Report::default());
        assert!(rep.to_text().contains("runs: 0"));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn report_summarizes_a_single_run() {
        let dir = tmp_dir("single");
        let mut cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 2, 32, 6);
        cfg.capture_every = 3;
        cfg.out_dir = Some(dir.clone());
        let rec = train_run(&cfg).unwrap();
        assert!(dir.join("run.json").is_file());
        assert!(dir.join("captures.csv").is_file());
        let csvs: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("hist_"))
            .collect();
        assert_eq!(csvs.len(), rec.captures.len());
        let rep = report_dir(&dir).unwrap();
        assert!(rep.issues.is_empty());
        assert_eq!(rep.runs.len(), 1);
        let (best, at) = rec.best_metric();
        assert_eq!(rep.runs[0].best_metric, best);
        assert_eq!(rep.runs[0].best_epoch, at);
        assert_eq!(rep.runs[0].file, "run.json");
        assert!(rep.to_text().contains("run.json"));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn report_grid_argmax_matches_a_manual_scan() {
        let dir = tmp_dir("grid");
        let cfg = blob_config(160, 3, 4, 0.4, &[4, 8, 3], 2, 32, 4);
        let axes =
            GridAxes { alphas: vec![1e-3, 1e-2], epsilons: vec![1e-8, 1e-4], beta2s: vec![0.999] };
        let grid = grid_run(&cfg, &axes, 2).unwrap();
        let text = grid_to_csv(&grid);
        fs::write(dir.join("grid.csv"), &text).unwrap();
        // Oracle: scan the CSV rows by hand.
        let mut best: Option<(f64, f64, f64)> = None; // (metric, alpha, epsilon)
        for line in text.lines().skip_while(|l| l.starts_with('#')).skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                continue;
            }
            let metric: f64 = cols[3].parse().unwrap();
            if best.map_or(true, |(m, _, _)| metric > m) {
                best = Some((metric, cols[0].parse().unwrap(), cols[1].parse().unwrap()));
            }
        }
        let (metric, alpha, epsilon) = best.unwrap();
        let rep = report_dir(&dir).unwrap();
        assert_eq!(rep.grids.len(), 1);
        let b = rep.grids[0].best.as_ref().unwrap();
        assert_eq!((b.best_metric, b.alpha, b.epsilon), (metric, alpha, epsilon));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn report_pairs_probe_points_with_best_grid_cells() {
        let dir = tmp_dir("pairs");
        // Estimate whose probe points are exactly 1e-5 and 1e-1.
        let cfg = blob_config(100, 3, 4, 0.4, &[4, 8, 3], 1, 32, 1);
        let snaps = vec![MagnitudeSnapshot {
            variable_id: "w1".into(),
            values: vec![1e-5, 1e-3, 1e-1],
            iteration: 7,
            epoch: 1,
        }];
        let est = estimate_injected(&cfg, &snaps).unwrap();
        assert_eq!(est.probe_points, vec![1e-5, 1e-1]);
        write_json(&dir.join("estimate.json"), &est).unwrap();
        // Hand-built grid: known best alpha per eps column.
        let grid = GridResult {
            axes: GridAxes {
                alphas: vec![1e-3, 1e-2],
                epsilons: vec![1e-5, 1e-1],
                beta2s: vec![0.999],
            },
            cells: vec![
                GridCell { alpha: 1e-3, epsilon: 1e-5, beta2: 0.999, best_metric: 0.7, best_epoch: 1 },
                GridCell { alpha: 1e-3, epsilon: 1e-1, beta2: 0.999, best_metric: 0.8, best_epoch: 2 },
                GridCell { alpha: 1e-2, epsilon: 1e-5, beta2: 0.999, best_metric: 0.9, best_epoch: 1 },
                GridCell { alpha: 1e-2, epsilon: 1e-1, beta2: 0.999, best_metric: 0.6, best_epoch: 1 },
            ],
            failures: vec![],
        };
        fs::write(dir.join("grid.csv"), grid_to_csv(&grid)).unwrap();
        let rep = report_dir(&dir).unwrap();
        assert_eq!(rep.recommendations.len(), 2);
        let lo = &rep.recommendations[0];
        assert_eq!((lo.eps, lo.alpha, lo.metric), (1e-5, Some(1e-2), Some(0.9)));
        let hi = &rep.recommendations[1];
        assert_eq!((hi.eps, hi.alpha, hi.metric), (1e-1, Some(1e-3), Some(0.8)));
        assert_eq!(lo.grid_file.as_deref(), Some("grid.csv"));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn corrupt_artifacts_are_reported_not_fatal() {
        let dir = tmp_dir("corrupt");
        fs::write(dir.join("run.json"), "{not json").unwrap();
        fs::write(dir.join("notes.txt"), "ignored entirely").unwrap();
        let rep = report_dir(&dir).unwrap();
        assert!(rep.runs.is_empty());
        assert_eq!(rep.issues.len(), 1);
        assert_eq!(rep.issues[0].file, "run.json");
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn injected_estimation_reports_regimes_at_both_bounds() {
        let cfg = blob_config(100, 3, 4, 0.4, &[4, 8, 3], 1, 32, 1);
        let snaps = vec![MagnitudeSnapshot {
            variable_id: "w1".into(),
            values: (0..512).map(|i| 10f64.powf(-5.0 + 4.0 * (i as f64 + 0.5) / 512.0)).collect(),
            iteration: 3,
            epoch: 1,
        }];
        let est = estimate_injected(&cfg, &snaps).unwrap();
        assert_eq!(est.range.eps_lower, 1e-5);
        assert_eq!(est.range.eps_upper, 1e-1);
        assert_eq!(est.regime_at_lower.classification, Regime::FullyAdaptive);
        assert_eq!(est.regime_at_upper.classification, Regime::FullyImmutable);
    }
}
