//! Command-line experiment runner.
//!
//! Layout of an output directory written by `run`:
//!
//! ```text
//! <out>/manifest.toml             config snapshot, tool version, seeds
//! <out>/aggregate.csv             median / IQR per mode, iteration and metric
//! <out>/<mode>/metrics_seed<k>.csv
//! <out>/<mode>/timing_seed<k>.csv wall-clock seconds per iteration
//! <out>/<mode>/trace_seed<k>.csv  solver iterations of every MBRL iteration
//! <out>/<mode>/summary.csv        one row per seed
//! <out>/<mode>/model_seed<k>.json
//! <out>/<mode>/dataset_seed<k>.csv
//! ```
//!
//! Metric files contain no timing so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::arm::{self, State};
use crate::config::{ExperimentConfig, ModeKind};
use crate::error::{Error, Result};
use crate::gp::{GpModel, HyperparamSpec};
use crate::mbrl::{self, ExperimentResult, IterationRecord, SUCCESS_DISTANCE};

#[derive(Debug, Parser)]
#[command(name = "curious-ilqr", version, about = "Model-based RL with risk-seeking iLQR")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the MBRL loop for every configured mode and seed.
    Run(RunArgs),
    /// Re-optimise towards new targets with saved models.
    Transfer(TransferArgs),
    /// Parse and validate a config, then print it with defaults filled in.
    ValidateConfig(ConfigArg),
    /// Collect motor-babbling data and fit the initial model only.
    BabbleOnly(RunArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML experiment config; omit for defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Override `n_seeds`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Override `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override `workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Saved model file; repeat for several models.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// CSV of joint-space targets with header `theta_1,...,theta_n`.
    #[arg(long)]
    pub targets: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    match &arg.config {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, args: &RunArgs) -> Result<ExperimentConfig> {
    if let Some(n) = args.seeds {
        cfg.n_seeds = n;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => {
            let cfg = apply_overrides(load_config(&args.config)?, &args)?;
            let out = cfg.output_dir.clone();
            cmd_run(&cfg, &out)
        }
        Command::BabbleOnly(args) => {
            let cfg = apply_overrides(load_config(&args.config)?, &args)?;
            let out = cfg.output_dir.clone();
            cmd_babble_only(&cfg, &out)
        }
        Command::ValidateConfig(arg) => {
            let cfg = load_config(&arg)?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Transfer(args) => {
            let mut cfg = load_config(&args.config)?;
            if let Some(w) = args.workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let targets = read_targets(&args.targets, cfg.arm.n_links)?;
            cmd_transfer(&cfg, &args.models, &targets, &args.out)
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    seeds: Vec<u64>,
    config: &'a ExperimentConfig,
}

fn write_manifest(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        command,
        seeds: cfg.seeds(),
        config: cfg,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 9] = [
    "iteration",
    "final_ee_distance",
    "rollout_cost",
    "model_rmse",
    "dataset_size",
    "solver_converged",
    "solver_iterations",
    "planned_cost",
    "error",
];

pub fn write_metrics(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.final_ee_distance.to_string(),
            r.rollout_cost.to_string(),
            r.model_rmse.to_string(),
            r.dataset_size.to_string(),
            r.solver_converged.to_string(),
            r.solver_iterations.to_string(),
            r.planned_cost.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_timing(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "wall_time"])?;
    for r in records {
        w.write_record([r.iteration.to_string(), r.wall_time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_traces(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mbrl_iteration", "solver_iteration", "lambda", "alpha", "cost", "expected_improvement", "accepted"])?;
    for (i, trace) in result.solver_traces.iter().enumerate() {
        for t in trace {
            w.write_record([
                (i + 1).to_string(),
                t.iteration.to_string(),
                t.lambda.to_string(),
                t.alpha.map(|a| a.to_string()).unwrap_or_default(),
                t.cost.to_string(),
                t.expected_improvement.to_string(),
                t.accepted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one (mode, seed) job.
#[derive(Clone, Debug)]
pub struct SeedSummary {
    pub mode: ModeKind,
    pub seed: u64,
    pub target: Vec<f64>,
    pub initial_model_rmse: f64,
    pub records: Vec<IterationRecord>,
    pub error: Option<String>,
}

fn run_seed(cfg: &ExperimentConfig, kind: ModeKind, seed: u64, dir: &Path) -> Result<SeedSummary> {
    let target = cfg.target_for(seed).to_vec();
    let result = mbrl::run_experiment(
        &cfg.arm,
        &cfg.cost.for_target(&target),
        &cfg.solver_config(),
        &cfg.exploration_mode(kind),
        &cfg.settings(),
        cfg.n_iterations,
        seed,
    )?;
    write_metrics(&dir.join(format!("metrics_seed{seed}.csv")), &result.records)?;
    write_timing(&dir.join(format!("timing_seed{seed}.csv")), &result.records)?;
    write_traces(&dir.join(format!("trace_seed{seed}.csv")), &result)?;
    result.final_model.save(&dir.join(format!("model_seed{seed}.json")))?;
    result.dataset.save(&dir.join(format!("dataset_seed{seed}.csv")))?;
    Ok(SeedSummary {
        mode: kind,
        seed,
        target,
        initial_model_rmse: result.initial_model_rmse,
        records: result.records,
        error: None,
    })
}

fn write_summary(path: &Path, rows: &[SeedSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "target", "initial_model_rmse", "final_ee_distance", "success", "error"])?;
    for r in rows {
        let last = r.records.last().map(|x| x.final_ee_distance);
        w.write_record([
            r.seed.to_string(),
            r.target.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            r.initial_model_rmse.to_string(),
            last.map(|d| d.to_string()).unwrap_or_default(),
            last.map(|d| (d < SUCCESS_DISTANCE).to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const AGGREGATE_METRICS: [&str; 4] = ["final_ee_distance", "rollout_cost", "model_rmse", "dataset_size"];

fn metric(r: &IterationRecord, name: &str) -> f64 {
    match name {
        "final_ee_distance" => r.final_ee_distance,
        "rollout_cost" => r.rollout_cost,
        "model_rmse" => r.model_rmse,
        "dataset_size" => r.dataset_size as f64,
        _ => unreachable!("unknown metric {name}"),
    }
}

pub fn write_aggregate(path: &Path, cfg: &ExperimentConfig, rows: &[SeedSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "iteration", "metric", "n", "median", "q1", "q3", "iqr"])?;
    for &kind in &cfg.mode {
        for it in 1..=cfg.n_iterations {
            for name in AGGREGATE_METRICS {
                let mut vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.mode == kind)
                    .filter_map(|r| r.records.iter().find(|x| x.iteration == it))
                    .map(|r| metric(r, name))
                    .filter(|v| !v.is_nan())
                    .collect();
                vals.sort_by(f64::total_cmp);
                let (q1, med, q3) = (quantile(&vals, 0.25), quantile(&vals, 0.5), quantile(&vals, 0.75));
                w.write_record([
                    kind.name().to_string(),
                    it.to_string(),
                    name.to_string(),
                    vals.len().to_string(),
                    med.to_string(),
                    q1.to_string(),
                    q3.to_string(),
                    (q3 - q1).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Run every configured mode and seed, writing artifacts under `out`.
/// Seeds that fail are reported after all others have finished.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    write_manifest(cfg, out, "run")?;
    let jobs: Vec<(ModeKind, u64)> =
        cfg.mode.iter().flat_map(|&m| cfg.seeds().into_iter().map(move |s| (m, s))).collect();
    for m in &cfg.mode {
        fs::create_dir_all(out.join(m.name()))?;
    }
    let rows: Vec<SeedSummary> = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(kind, seed)| {
                let dir = out.join(kind.name());
                run_seed(cfg, kind, seed, &dir).unwrap_or_else(|e| {
                    log::error!("{} seed {seed}: {e}", kind.name());
                    SeedSummary {
                        mode: kind,
                        seed,
                        target: cfg.target_for(seed).to_vec(),
                        initial_model_rmse: f64::NAN,
                        records: Vec::new(),
                        error: Some(e.to_string()),
                    }
                })
            })
            .collect()
    });
    for m in &cfg.mode {
        let mine: Vec<_> = rows.iter().filter(|r| r.mode == *m).cloned().collect();
        write_summary(&out.join(m.name()).join("summary.csv"), &mine)?;
    }
    write_aggregate(&out.join("aggregate.csv"), cfg, &rows)?;
    let failed: Vec<_> = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} seed {}: {e}", r.mode.name(), r.seed)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{} job(s) failed: {}", failed.len(), failed.join("; "))))
    }
}

/// Motor babbling plus initial model fit for each seed.
pub fn cmd_babble_only(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    write_manifest(cfg, out, "babble-only")?;
    let settings = cfg.settings();
    let s0 = State::at_rest(&settings.start_theta);
    let rows: Vec<Result<(u64, usize, f64)>> = pool(cfg.workers)?.install(|| {
        cfg.seeds()
            .par_iter()
            .map(|&seed| {
                let data = arm::motor_babble(&cfg.arm, &s0, settings.babble_duration, settings.babble_torque_std, seed)?;
                let model = GpModel::fit(&data, &HyperparamSpec::Optimize(settings.gp.clone()), seed)?;
                data.save(&out.join(format!("dataset_seed{seed}.csv")))?;
                model.save(&out.join(format!("model_seed{seed}.json")))?;
                Ok((seed, data.len(), model.prediction_error(&data)?))
            })
            .collect()
    });
    let mut w = csv::Writer::from_path(out.join("babble.csv"))?;
    w.write_record(["seed", "dataset_size", "training_rmse"])?;
    for r in rows {
        let (seed, n, rmse) = r?;
        w.write_record([seed.to_string(), n.to_string(), rmse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Targets file: header `theta_1,...,theta_n`, one target per row.
pub fn read_targets(path: &Path, n_links: usize) -> Result<Vec<DVector<f64>>> {
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let expected: Vec<String> = (1..=n_links).map(|i| format!("theta_{i}")).collect();
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(parse_err(format!("expected header {expected:?}, got {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| parse_err(format!("row {}: expected {n_links} finite numbers", i + 1)))?;
        out.push(DVector::from_vec(vals));
    }
    if out.is_empty() {
        return Err(parse_err("no targets".into()));
    }
    Ok(out)
}

/// Re-optimise every target under every model; writes one row per
/// (target, model) pair.
pub fn cmd_transfer(cfg: &ExperimentConfig, models: &[PathBuf], targets: &[DVector<f64>], out: &Path) -> Result<()> {
    cfg.validate()?;
    let loaded = models.iter().map(|p| GpModel::load(p)).collect::<Result<Vec<_>>>()?;
    let template = cfg.cost.for_target(&vec![0.0; cfg.arm.n_links]);
    let results: Vec<Result<Vec<mbrl::TransferOutcome>>> = pool(cfg.workers)?.install(|| {
        loaded
            .par_iter()
            .map(|m| {
                mbrl::evaluate_transfer(
                    m,
                    &cfg.arm,
                    &template,
                    targets,
                    &cfg.solver_config(),
                    &cfg.task.start_theta,
                    cfg.seed_base,
                )
            })
            .collect()
    });
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["target_index".to_string(), "model".to_string()];
    header.extend((1..=cfg.arm.n_links).map(|i| format!("theta_{i}")));
    header.extend(["ee_distance".to_string(), "solver_converged".to_string()]);
    w.write_record(&header)?;
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    for ti in 0..targets.len() {
        for (mi, res) in results.iter().enumerate() {
            let o = &res[ti];
            let mut row = vec![ti.to_string(), models[mi].display().to_string()];
            row.extend(o.target.iter().map(|v| v.to_string()));
            row.extend([o.ee_distance.to_string(), o.solver_converged.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn targets_parse_and_reject() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("t.csv");
        fs::write(&good, "theta_1,theta_2\n0.5,0.25\n-1,1\n").unwrap();
        let t = read_targets(&good, 2).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1][0], -1.0);
        for bad in ["theta_1\n0.5\n", "theta_1,theta_2\n0.5,abc\n", "theta_1,theta_2\n", "theta_1,theta_2\n1,2,3\n"] {
            fs::write(&good, bad).unwrap();
            assert!(read_targets(&good, 2).is_err(), "{bad:?}");
        }
    }
}
