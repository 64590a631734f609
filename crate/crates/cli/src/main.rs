//! `optscope` — train small classifiers under eleven first-order update
//! rules, probe the magnitudes their adaptive denominators produce, estimate
//! a working range for the damping constant eps, sweep hyperparameter grids,
//! and roll the artifacts up into reports.
//!
//! Subcommands: `train`, `estimate-eps`, `grid`, `hist-dump`, `report`.
//! Configuration comes from a JSON `RunConfig` file plus flag overrides.
//! Exit codes: 0 success, 2 config/usage error, 3 numeric abort, 4 partial
//! grid failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optscope_core::{
    build_histogram, estimate_injected, estimate_run, fraction_above, grid_run, grid_to_csv,
    hist_dump, load_snapshots, report_dir, train_run, write_json, Error, EstimationReport,
    GridAxes, Result, RunConfig, RunRecord,
};

#[derive(Parser)]
#[command(
    name = "optscope",
    version,
    about = "Adaptive-optimizer training runs, eps estimation, grids, and magnitude histograms"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every config-driven subcommand. Each override replaces
/// the corresponding RunConfig field before validation.
#[derive(Args, Clone)]
struct CommonOpts {
    /// RunConfig JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Update rule override (sgd, sgd-momentum, adagrad, rmsprop, adam,
    /// diffgrad, adamod, adabelief, madgrad, eadam, adamomentum).
    #[arg(long)]
    rule: Option<String>,
    /// Learning rate override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Immutability constant override.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    beta3: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    dampening: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Capture magnitude histograms every K steps (0 = off).
    #[arg(long)]
    capture_every: Option<u64>,
    /// Output directory. Defaults to the config's out_dir, then
    /// $OPTSCOPE_OUT, then the current directory. Relative paths are rooted
    /// under $OPTSCOPE_OUT when it is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON array of magnitude snapshots; feeds the estimator/histogram
    /// paths directly instead of training.
    #[arg(long)]
    inject_snapshot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run; writes run.json (plus histogram CSVs when capturing).
    Train(CommonOpts),
    /// One-epoch probe estimating the eps working range; writes estimate.json.
    EstimateEps(CommonOpts),
    /// One run per (alpha, eps, beta2) cell; writes grid.csv.
    Grid {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated alpha axis (defaults to the config's alpha).
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        /// Comma-separated eps axis (defaults to the config's eps).
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        /// Comma-separated beta2 axis (defaults to the config's beta2).
        #[arg(long, value_delimiter = ',')]
        beta2s: Vec<f64>,
        /// Worker threads; 0 picks one per available core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Train while writing magnitude histogram CSVs every K steps.
    HistDump {
        #[command(flatten)]
        common: CommonOpts,
        /// Capture cadence in optimizer steps.
        #[arg(long)]
        every_k: u64,
    },
    /// Summarize run.json / grid.csv / estimate.json artifacts under a directory.
    Report {
        /// Directory to scan; defaults to $OPTSCOPE_OUT, then the current directory.
        dir: Option<PathBuf>,
        /// Also write report.json into the scanned directory.
        #[arg(long)]
        json: bool,
        /// Accepted for interface symmetry; the report reads artifacts only.
        #[arg(long)]
        inject_snapshot: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Exit codes: 2 config, 3 numeric abort, 4 partial grid.
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Root relative output paths under $OPTSCOPE_OUT; fall back to it, then ".".
fn resolve_out(explicit: Option<PathBuf>) -> PathBuf {
    let root = std::env::var_os("OPTSCOPE_OUT").map(PathBuf::from);
    match (explicit, root) {
        (Some(p), Some(r)) if p.is_relative() => r.join(p),
        (Some(p), _) => p,
        (None, Some(r)) => r,
        (None, None) => PathBuf::from("."),
    }
}

/// Load the config file and fold the flag overrides in.
fn load_config(c: &CommonOpts) -> Result<RunConfig> {
    let text = fs::read_to_string(&c.config)?;
    let mut config: RunConfig = serde_json::from_str(&text)?;
    if let Some(r) = &c.rule {
        config.optimizer.rule = r.parse()?;
    }
    let hp = &mut config.optimizer.hp;
    if let Some(v) = c.alpha {
        hp.alpha = v;
    }
    if let Some(v) = c.eps {
        hp.eps = v;
    }
    if let Some(v) = c.beta1 {
        hp.beta1 = v;
    }
    if let Some(v) = c.beta2 {
        hp.beta2 = v;
    }
    if let Some(v) = c.beta3 {
        hp.beta3 = v;
    }
    if let Some(v) = c.momentum {
        hp.momentum = v;
    }
    if let Some(v) = c.dampening {
        hp.dampening = v;
    }
    if let Some(v) = c.weight_decay {
        hp.weight_decay = v;
    }
    if let Some(v) = c.seed {
        config.seed = v;
    }
    if let Some(v) = c.epochs {
        config.epochs = v;
    }
    if let Some(v) = c.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = c.capture_every {
        config.capture_every = v;
    }
    config.out_dir = Some(resolve_out(c.out.clone().or(config.out_dir.take())));
    config.validate()?;
    Ok(config)
}

fn print_run(record: &RunRecord, out: &std::path::Path) {
    for e in &record.epochs {
        match (e.test_loss, e.test_accuracy) {
            (Some(tl), Some(ta)) => println!(
                "epoch {:>3}  train loss {:.4} acc {:.4}   test loss {:.4} acc {:.4}",
                e.epoch, e.train_loss, e.train_accuracy, tl, ta
            ),
            _ => println!(
                "epoch {:>3}  train loss {:.4} acc {:.4}",
                e.epoch, e.train_loss, e.train_accuracy
            ),
        }
    }
    let (best, at) = record.best_metric();
    println!(
        "best {:.4} @ epoch {at}; {} captures; {:.2}s wall; params sha256 {}",
        best,
        record.captures.len(),
        record.wall_time_secs,
        &record.final_params_digest[..16],
    );
    println!("wrote {}", out.join("run.json").display());
}

fn print_estimate(report: &EstimationReport) {
    let r = &report.range;
    println!(
        "rule {}: probed {} steps (T = {} per epoch), seed {}",
        r.probe.rule, r.probe.steps_performed, r.probe.t_per_epoch, r.probe.seed
    );
    println!("eps range: [{:e}, {:e}]", r.eps_lower, r.eps_upper);
    for v in &r.per_variable {
        println!("  {}: p2 {:e}  p98 {:e}", v.variable_id, v.p2, v.p98);
    }
    if !r.skipped_variables.is_empty() {
        println!("  skipped (all-zero magnitudes): {}", r.skipped_variables.join(", "));
    }
    println!(
        "regime at {:e}: {} (fraction above = {:.4})",
        report.regime_at_lower.eps,
        report.regime_at_lower.classification,
        report.regime_at_lower.overall_fraction
    );
    println!(
        "regime at {:e}: {} (fraction above = {:.4})",
        report.regime_at_upper.eps,
        report.regime_at_upper.classification,
        report.regime_at_upper.overall_fraction
    );
    let pts: Vec<String> = report.probe_points.iter().map(|p| format!("{p:e}")).collect();
    println!("probe recommendation: eps in {{{}}}", pts.join(", "));
    let b = &report.beta2_advice;
    println!(
        "beta2 advice: >= {:.6} to cover one epoch of {} steps (beta1 {}, gap {:.6}{})",
        b.suggested_beta2,
        b.batches_per_epoch,
        b.beta1,
        b.gap,
        if b.beta2_exceeds_beta1 { "" } else { "; WARNING: not above beta1" }
    );
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(c) => {
            if c.inject_snapshot.is_some() {
                eprintln!("note: --inject-snapshot has no effect on train");
            }
            let config = load_config(&c)?;
            let out = config.out_dir.clone().expect("resolved above");
            let record = train_run(&config)?;
            print_run(&record, &out);
            Ok(())
        }
        Cmd::EstimateEps(c) => {
            let config = load_config(&c)?;
            let out = config.out_dir.clone().expect("resolved above");
            let report = match &c.inject_snapshot {
                Some(path) => estimate_injected(&config, &load_snapshots(path)?)?,
                None => estimate_run(&config)?,
            };
            print_estimate(&report);
            fs::create_dir_all(&out)?;
            write_json(&out.join("estimate.json"), &report)?;
            println!("wrote {}", out.join("estimate.json").display());
            Ok(())
        }
        Cmd::Grid { common, alphas, epsilons, beta2s, workers } => {
            if common.inject_snapshot.is_some() {
                eprintln!("note: --inject-snapshot has no effect on grid");
            }
            let config = load_config(&common)?;
            let out = config.out_dir.clone().expect("resolved above");
            let axes = GridAxes {
                alphas: if alphas.is_empty() { vec![config.optimizer.hp.alpha] } else { alphas },
                epsilons: if epsilons.is_empty() {
                    vec![config.optimizer.hp.eps]
                } else {
                    epsilons
                },
                beta2s: if beta2s.is_empty() { vec![config.optimizer.hp.beta2] } else { beta2s },
            };
            let grid = grid_run(&config, &axes, workers)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("grid.csv"), grid_to_csv(&grid))?;
            println!(
                "grid {}x{}x{} = {} cells ({} completed, {} failed)",
                grid.axes.alphas.len(),
                grid.axes.epsilons.len(),
                grid.axes.beta2s.len(),
                grid.axes.alphas.len() * grid.axes.epsilons.len() * grid.axes.beta2s.len(),
                grid.cells.len(),
                grid.failures.len()
            );
            if let Some(b) = grid.best_cell() {
                println!(
                    "best: alpha={:e} eps={:e} beta2={:e} metric {:.4} @ epoch {}",
                    b.alpha, b.epsilon, b.beta2, b.best_metric, b.best_epoch
                );
            }
            for f in &grid.failures {
                eprintln!(
                    "failed cell alpha={:e} eps={:e} beta2={:e}: {}",
                    f.alpha, f.epsilon, f.beta2, f.error
                );
            }
            println!("wrote {}", out.join("grid.csv").display());
            if !grid.failures.is_empty() {
                return Err(Error::GridPartial {
                    failed: grid.failures.len(),
                    total: grid.cells.len() + grid.failures.len(),
                });
            }
            Ok(())
        }
        Cmd::HistDump { common, every_k } => {
            let config = load_config(&common)?;
            let out = config.out_dir.clone().expect("resolved above");
            match &common.inject_snapshot {
                Some(path) => {
                    // Histogram recorded snapshots directly; no training.
                    fs::create_dir_all(&out)?;
                    for snap in load_snapshots(path)? {
                        let hist = build_histogram(&snap)?;
                        let frac = fraction_above(&snap.values, config.optimizer.hp.eps)?;
                        let name = format!("hist_{}_{:06}.csv", snap.variable_id, snap.iteration);
                        fs::write(out.join(&name), hist.to_csv())?;
                        println!(
                            "{}: iteration {} fraction_above({:e}) = {:.4}",
                            name, snap.iteration, config.optimizer.hp.eps, frac
                        );
                    }
                }
                None => {
                    let record = hist_dump(&config, every_k)?;
                    for c in &record.captures {
                        println!(
                            "epoch {} iteration {} {}: fraction_above({:e}) = {:.4}",
                            c.epoch,
                            c.iteration,
                            c.variable_id,
                            config.optimizer.hp.eps,
                            c.fraction_above_eps
                        );
                    }
                    print_run(&record, &out);
                }
            }
            Ok(())
        }
        Cmd::Report { dir, json, inject_snapshot } => {
            if inject_snapshot.is_some() {
                eprintln!("note: --inject-snapshot has no effect on report");
            }
            let dir = resolve_out(dir);
            let report = report_dir(&dir)?;
            print!("{}", report.to_text());
            if json {
                write_json(&dir.join("report.json"), &report)?;
                println!("wrote {}", dir.join("report.json").display());
            }
            Ok(())
        }
    }
}
