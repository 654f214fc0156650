//! Command implementations behind the `tinyprop` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::{DatasetSpec, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{run_compare, run_sweep, sweep_cells, Experiment};
use crate::network::Network;
use crate::par::Execution;
use crate::report::{self, CompareReport, SweepReport};
use crate::trainer::{self, RunReport};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INITIAL_WEIGHTS_FILE: &str = "initial_weights.bin";
pub const FINAL_WEIGHTS_FILE: &str = "final_weights.bin";
pub const COMPARE_FILE: &str = "compare.json";
pub const SWEEP_FILE: &str = "sweep.json";

/// Short dataset description stored in every report.
pub fn dataset_label(spec: &DatasetSpec) -> &'static str {
    match spec {
        DatasetSpec::Idx { .. } => "idx",
        DatasetSpec::Anomaly { .. } => "synthetic:anomaly (surrogate for machine-sound anomaly data)",
        DatasetSpec::Blobs { .. } => "synthetic:blobs",
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub struct TrainOutcome {
    pub report: RunReport,
    pub summary: Value,
    pub out_dir: PathBuf,
}

/// Trains once, writing trace, summary and initial/final weights to `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (train, test) = cfg.dataset.load()?;
    let mut net = cfg.network.build(cfg.train.seed)?;
    create_dir(&cfg.out_dir)?;
    net.save_weights(&cfg.out_dir.join(INITIAL_WEIGHTS_FILE))?;
    let initial = net.weights_digest();

    let report = trainer::train(&mut net, &train, &test, &cfg.train)?;
    net.save_weights(&cfg.out_dir.join(FINAL_WEIGHTS_FILE))?;
    let summary = report::summary_record(
        &report,
        &[
            ("dataset", json!(dataset_label(&cfg.dataset))),
            ("train_samples", json!(train.len())),
            ("test_samples", json!(test.len())),
            ("initial_weights_sha256", json!(initial)),
            ("final_weights_sha256", json!(net.weights_digest())),
        ],
    );
    report::write_trace(&cfg.out_dir.join(TRACE_FILE), &report, &summary)?;
    report::write_json(&cfg.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(TrainOutcome { report, summary, out_dir: cfg.out_dir.clone() })
}

pub fn cmd_compare(cfg: &RunConfig, exec: Execution) -> Result<CompareReport> {
    let (train, test) = cfg.dataset.load()?;
    let exp = Experiment { network: &cfg.network, train: &train, test: &test, config: &cfg.train };
    let report = run_compare(&exp, &cfg.compare_engines, &cfg.seeds(cfg.compare_seeds), exec)?;
    create_dir(&cfg.out_dir)?;
    report::write_json(&cfg.out_dir.join(COMPARE_FILE), &report)?;
    Ok(report)
}

pub fn cmd_sweep(cfg: &RunConfig, exec: Execution) -> Result<SweepReport> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep: section missing".into()))?;
    let (train, test) = cfg.dataset.load()?;
    let exp = Experiment { network: &cfg.network, train: &train, test: &test, config: &cfg.train };
    let cells = sweep_cells(&sweep.s_min, &sweep.s_max, &sweep.zeta);
    let report = run_sweep(&exp, &cells, &cfg.seeds(sweep.repeats), exec)?;
    create_dir(&cfg.out_dir)?;
    report::write_json(&cfg.out_dir.join(SWEEP_FILE), &report)?;
    Ok(report)
}

/// Test accuracy of saved weights under the config's network and dataset.
pub fn cmd_eval(cfg: &RunConfig, weights: &Path) -> Result<f64> {
    let (_, test) = cfg.dataset.load()?;
    let mut net: Network = cfg.network.build(cfg.train.seed)?;
    net.load_weights(weights)?;
    trainer::evaluate(&net, &test)
}

fn opt(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.*}", digits, x * scale))
}

pub fn format_compare(report: &CompareReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>9} {:>7} {:>8} {:>9} {:>10} {:>9}",
        "engine", "acc %", "± sd", "ratio", "accel(x)", "epoch s", "time x"
    );
    for r in &report.rows {
        if r.status != "ok" {
            let _ = writeln!(out, "{:<24} failed: {}", r.engine, r.error.as_deref().unwrap_or(""));
            continue;
        }
        let _ = writeln!(
            out,
            "{:<24} {:>9} {:>7} {:>8} {:>9} {:>10} {:>9}",
            r.engine,
            opt(r.accuracy.map(|s| s.mean), 100.0, 2),
            opt(r.accuracy.map(|s| s.std), 100.0, 2),
            opt(r.backprop_ratio.map(|s| s.mean), 1.0, 3),
            opt(r.acceleration_analytic, 1.0, 2),
            opt(r.epoch_seconds_mean, 1.0, 3),
            opt(r.time_ratio_vs_baseline, 1.0, 2),
        );
    }
    out
}

pub fn format_sweep(report: &SweepReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>6} {:>9} {:>7} {:>8} {:>7}  default",
        "s_min", "s_max", "zeta", "acc %", "± sd", "ratio", "± sd"
    );
    for r in &report.rows {
        let _ = write!(out, "{:>6} {:>6} {:>6} ", r.s_min, r.s_max, r.zeta);
        if r.status != "ok" {
            let _ = writeln!(out, "failed: {}", r.error.as_deref().unwrap_or(""));
            continue;
        }
        let _ = writeln!(
            out,
            "{:>9} {:>7} {:>8} {:>7}  {}",
            opt(r.accuracy.map(|s| s.mean), 100.0, 2),
            opt(r.accuracy.map(|s| s.std), 100.0, 2),
            opt(r.backprop_ratio.map(|s| s.mean), 1.0, 3),
            opt(r.backprop_ratio.map(|s| s.std), 1.0, 3),
            r.recommended_default.as_deref().unwrap_or(""),
        );
    }
    out
}
