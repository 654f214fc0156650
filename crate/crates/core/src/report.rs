//! Machine-readable run output.
//!
//! A training run writes `trace.jsonl`: one JSON object per step
//! (`"record": "step"`) followed by one summary object
//! (`"record": "summary"`). Step records carry the fixed fields
//! `step, loss, layer, k, S, macs_sparse, macs_dense` where `layer`, `k` and
//! `S` are per-layer arrays (layer 1 first). The same summary object is also
//! written to `summary.json`. Fields listed in [`WALL_TIME_FIELDS`] are the
//! only ones that vary between identical runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::trainer::{RunReport, StepMetrics};

pub const WALL_TIME_FIELDS: [&str; 5] = [
    "elapsed_ns",
    "epoch_seconds",
    "mean_epoch_seconds",
    "epoch_seconds_mean",
    "time_ratio_vs_baseline",
];

pub fn step_record(s: &StepMetrics) -> Value {
    json!({
        "record": "step",
        "step": s.step,
        "epoch": s.epoch,
        "loss": s.loss,
        "layer": (1..=s.layers.len()).collect::<Vec<_>>(),
        "k": s.layers.iter().map(|l| l.k).collect::<Vec<_>>(),
        "S": s.layers.iter().map(|l| l.rate).collect::<Vec<_>>(),
        "macs_sparse": s.macs_sparse,
        "macs_dense": s.macs_dense,
        "elapsed_ns": s.elapsed_ns,
    })
}

/// Summary record; `extra` entries (e.g. weight digests) are merged in.
pub fn summary_record(r: &RunReport, extra: &[(&str, Value)]) -> Value {
    let mut v = json!({
        "record": "summary",
        "engine": r.engine,
        "mode": r.mode,
        "seed": r.seed,
        "steps": r.trace.len(),
        "steps_per_epoch": r.steps_per_epoch,
        "layer_dims": r.layer_dims,
        "final_accuracy": r.final_accuracy,
        "mean_backprop_ratio": r.mean_backprop_ratio,
        "acceleration_analytic": r.acceleration_analytic,
        "epoch_seconds": r.epoch_seconds,
        "mean_epoch_seconds": r.mean_epoch_seconds(),
        "pretrain_steps": r.pretrain.as_ref().map(|p| p.steps),
        "pretrain_accuracy": r.pretrain.as_ref().map(|p| p.accuracy),
    });
    let obj = v.as_object_mut().expect("object literal");
    for (k, val) in extra {
        obj.insert((*k).to_string(), val.clone());
    }
    v
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, report: &RunReport, summary: &Value) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for s in &report.trace {
        serde_json::to_writer(&mut w, &step_record(s))?;
        w.write_all(b"\n").map_err(io)?;
    }
    serde_json::to_writer(&mut w, summary)?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Recursively drops wall-clock fields so two runs can be compared.
pub fn strip_wall_time(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for f in WALL_TIME_FIELDS {
                map.remove(f);
            }
            map.values_mut().for_each(strip_wall_time);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

/// Reads a trace file with wall-clock fields removed, one value per line.
pub fn read_trace_without_wall_time(path: &Path) -> Result<Vec<Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|line| {
            let mut v: Value = serde_json::from_str(line)?;
            strip_wall_time(&mut v);
            Ok(v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Digest of the weights training started from.
    pub initial_weights_sha256: String,
    pub final_accuracy: f64,
    pub mean_backprop_ratio: f64,
    pub acceleration_analytic: f64,
    pub mean_epoch_seconds: f64,
    /// Mean output-layer rate per epoch.
    pub output_rate_by_epoch: Vec<f64>,
}

impl SeedRun {
    pub fn from_report(r: &RunReport, initial_weights_sha256: String) -> Self {
        SeedRun {
            seed: r.seed,
            initial_weights_sha256,
            final_accuracy: r.final_accuracy,
            mean_backprop_ratio: r.mean_backprop_ratio,
            acceleration_analytic: r.acceleration_analytic,
            mean_epoch_seconds: r.mean_epoch_seconds(),
            output_rate_by_epoch: r.mean_rate_by_epoch(r.layer_dims.len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub engine: String,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub accuracy: Option<Stat>,
    pub backprop_ratio: Option<Stat>,
    pub acceleration_analytic: Option<f64>,
    pub epoch_seconds_mean: Option<f64>,
    /// Mean epoch time over the baseline row's mean epoch time.
    pub time_ratio_vs_baseline: Option<f64>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub mode: crate::trainer::Mode,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Start-weight digest per seed, shared by every row.
    pub initial_weights_sha256: Vec<String>,
    pub shared_initial_weights: bool,
    pub pretrain_accuracy: Option<Vec<f64>>,
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn row(&self, engine: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.engine == engine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s_min: f64,
    pub s_max: f64,
    pub zeta: f64,
    pub status: String,
    pub error: Option<String>,
    pub accuracy: Option<Stat>,
    pub backprop_ratio: Option<Stat>,
    /// `scratch` or `fine-tune` when the cell is a recommended default.
    pub recommended_default: Option<String>,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: crate::trainer::Mode,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub rows: Vec<SweepRow>,
}

fn require(obj: &Map<String, Value>, key: &str, check: fn(&Value) -> bool, what: &str) -> Result<()> {
    match obj.get(key) {
        Some(v) if check(v) => Ok(()),
        Some(v) => Err(Error::InvalidArgument(format!("field {what}.{key}: unexpected value {v}"))),
        None => Err(Error::InvalidArgument(format!("field {what}.{key} missing"))),
    }
}

fn as_object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} is not an object")))
}

fn is_fraction(v: &Value) -> bool {
    v.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x))
}

fn is_uint_array(v: &Value) -> bool {
    v.as_array().is_some_and(|a| a.iter().all(Value::is_u64))
}

pub fn validate_step_record(v: &Value) -> Result<()> {
    let o = as_object(v, "step record")?;
    require(o, "record", |v| v == "step", "step")?;
    for key in ["step", "epoch", "macs_sparse", "macs_dense", "elapsed_ns"] {
        require(o, key, Value::is_u64, "step")?;
    }
    require(o, "loss", Value::is_number, "step")?;
    require(o, "layer", is_uint_array, "step")?;
    require(o, "k", is_uint_array, "step")?;
    require(o, "S", |v| v.as_array().is_some_and(|a| a.iter().all(is_fraction)), "step")?;
    let len = |k: &str| o[k].as_array().map_or(0, Vec::len);
    if len("layer") != len("k") || len("k") != len("S") {
        return Err(Error::InvalidArgument("step record: layer/k/S lengths differ".into()));
    }
    if o["macs_sparse"].as_u64() > o["macs_dense"].as_u64() {
        return Err(Error::InvalidArgument("step record: macs_sparse > macs_dense".into()));
    }
    Ok(())
}

pub fn validate_summary(v: &Value) -> Result<()> {
    let o = as_object(v, "summary")?;
    require(o, "record", |v| v == "summary", "summary")?;
    require(o, "engine", Value::is_string, "summary")?;
    require(o, "mode", Value::is_string, "summary")?;
    for key in ["seed", "steps", "steps_per_epoch"] {
        require(o, key, Value::is_u64, "summary")?;
    }
    require(o, "final_accuracy", is_fraction, "summary")?;
    require(o, "mean_backprop_ratio", is_fraction, "summary")?;
    require(o, "acceleration_analytic", |v| v.as_f64().is_some_and(|x| x >= 1.0), "summary")?;
    require(o, "epoch_seconds", |v| v.as_array().is_some_and(|a| a.iter().all(Value::is_number)), "summary")?;
    require(o, "mean_epoch_seconds", Value::is_number, "summary")?;
    require(o, "layer_dims", Value::is_array, "summary")?;
    Ok(())
}

/// Checks a whole `trace.jsonl`: step records then exactly one summary.
pub fn validate_trace_file(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let (last, steps) = lines
        .split_last()
        .ok_or_else(|| Error::InvalidArgument("empty trace".into()))?;
    for (i, line) in steps.iter().enumerate() {
        let v: Value = serde_json::from_str(line)?;
        validate_step_record(&v)?;
        if v["step"].as_u64() != Some(i as u64) {
            return Err(Error::InvalidArgument(format!("trace line {i}: step out of order")));
        }
    }
    validate_summary(&serde_json::from_str(last)?)
}

fn validate_stat(v: &Value, what: &str) -> Result<()> {
    if v.is_null() {
        return Ok(());
    }
    let o = as_object(v, what)?;
    require(o, "mean", Value::is_number, what)?;
    require(o, "std", Value::is_number, what)
}

fn validate_runs(v: &Value, what: &str) -> Result<()> {
    let runs = v
        .as_array()
        .ok_or_else(|| Error::InvalidArgument(format!("{what}.runs is not an array")))?;
    for r in runs {
        let o = as_object(r, "run")?;
        require(o, "seed", Value::is_u64, "run")?;
        require(o, "initial_weights_sha256", Value::is_string, "run")?;
        require(o, "final_accuracy", is_fraction, "run")?;
        require(o, "mean_backprop_ratio", is_fraction, "run")?;
        require(o, "output_rate_by_epoch", Value::is_array, "run")?;
    }
    Ok(())
}

pub fn validate_compare(v: &Value) -> Result<()> {
    let o = as_object(v, "compare report")?;
    require(o, "mode", Value::is_string, "compare")?;
    require(o, "seeds", is_uint_array, "compare")?;
    require(o, "shared_initial_weights", Value::is_boolean, "compare")?;
    let rows = o
        .get("rows")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidArgument("compare.rows missing".into()))?;
    for row in rows {
        let r = as_object(row, "compare row")?;
        require(r, "engine", Value::is_string, "row")?;
        require(r, "status", |v| v == "ok" || v == "failed", "row")?;
        validate_stat(&r["accuracy"], "row.accuracy")?;
        validate_stat(&r["backprop_ratio"], "row.backprop_ratio")?;
        validate_runs(&r["runs"], "row")?;
        if r["status"] == "ok" {
            require(r, "acceleration_analytic", Value::is_number, "row")?;
        }
    }
    Ok(())
}

pub fn validate_sweep(v: &Value) -> Result<()> {
    let o = as_object(v, "sweep report")?;
    require(o, "mode", Value::is_string, "sweep")?;
    require(o, "seeds", is_uint_array, "sweep")?;
    let rows = o
        .get("rows")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidArgument("sweep.rows missing".into()))?;
    for row in rows {
        let r = as_object(row, "sweep row")?;
        for key in ["s_min", "s_max", "zeta"] {
            require(r, key, Value::is_number, "row")?;
        }
        require(r, "status", |v| v == "ok" || v == "failed", "row")?;
        validate_stat(&r["accuracy"], "row.accuracy")?;
        validate_stat(&r["backprop_ratio"], "row.backprop_ratio")?;
        validate_runs(&r["runs"], "row")?;
    }
    Ok(())
}
