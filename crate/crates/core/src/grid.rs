//! Engine comparison grids and TinyProp hyperparameter sweeps.
//!
//! Every cell of a grid is one `(engine, seed)` training run with private
//! state. All cells of a seed start from the same weights (and, in fine-tune
//! mode, from the same pretrained weights) and see the same sample order.
//! Cells run through [`Execution`]; rows are assembled afterwards in grid order.

use crate::adapt::TinyPropConfig;
use crate::backprop::EngineKind;
use crate::datasets::Dataset;
use crate::error::Result;
use crate::network::{Network, NetworkSpec};
use crate::par::Execution;
use crate::report::{CompareReport, CompareRow, SeedRun, Stat, SweepReport, SweepRow};
use crate::trainer::{pretrain, run_epochs, Mode, TrainConfig};

/// Network, data and trainer settings shared by every cell.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub network: &'a NetworkSpec,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    /// `engine` and `seed` are overridden per cell.
    pub config: &'a TrainConfig,
}

struct Start {
    seed: u64,
    net: Network,
    digest: String,
    pretrain_accuracy: Option<f64>,
}

fn starts(exp: &Experiment<'_>, seeds: &[u64], exec: Execution) -> Result<Vec<Start>> {
    exec.map(seeds, |&seed| {
        let mut net = exp.network.build(seed)?;
        let pretrain_accuracy = match exp.config.mode {
            Mode::FineTune => {
                let cfg = TrainConfig { seed, engine: EngineKind::Full, ..exp.config.clone() };
                Some(pretrain(&mut net, exp.train, exp.test, &cfg)?.accuracy)
            }
            Mode::Scratch => None,
        };
        net.clear_caches();
        let digest = net.weights_digest();
        Ok(Start { seed, net, digest, pretrain_accuracy })
    })
    .into_iter()
    .collect()
}

/// Runs every valid engine against every start; invalid engines fail their row.
fn run_cells(
    exp: &Experiment<'_>,
    engines: &[Result<EngineKind, String>],
    starts: &[Start],
    exec: Execution,
) -> Vec<Result<Vec<SeedRun>, String>> {
    let cells: Vec<(usize, usize)> = (0..engines.len())
        .filter(|&e| engines[e].is_ok())
        .flat_map(|e| (0..starts.len()).map(move |s| (e, s)))
        .collect();
    let results = exec.map(&cells, |&(e, s)| {
        let start = &starts[s];
        let engine = engines[e].clone().expect("filtered to valid engines");
        let cfg = TrainConfig { engine, seed: start.seed, ..exp.config.clone() };
        let mut net = start.net.clone();
        run_epochs(&mut net, exp.train, exp.test, &cfg)
            .map(|report| SeedRun::from_report(&report, start.digest.clone()))
            .map_err(|err| format!("seed {}: {err}", start.seed))
    });

    let mut rows: Vec<Result<Vec<SeedRun>, String>> = engines
        .iter()
        .map(|e| e.as_ref().map(|_| Vec::new()).map_err(Clone::clone))
        .collect();
    for (&(e, _), result) in cells.iter().zip(results) {
        match (&mut rows[e], result) {
            (Ok(runs), Ok(run)) => runs.push(run),
            (row @ Ok(_), Err(msg)) => *row = Err(msg),
            (Err(_), _) => {}
        }
    }
    rows
}

fn stats(runs: &[SeedRun]) -> (Stat, Stat) {
    let acc: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let ratio: Vec<f64> = runs.iter().map(|r| r.mean_backprop_ratio).collect();
    (Stat::of(&acc), Stat::of(&ratio))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    Stat::of(&v).mean
}

/// One row per engine, in the given order. The time ratio is taken against
/// the first successful `full` row.
pub fn run_compare(
    exp: &Experiment<'_>,
    engines: &[EngineKind],
    seeds: &[u64],
    exec: Execution,
) -> Result<CompareReport> {
    exp.config.validate()?;
    let starts = starts(exp, seeds, exec)?;
    let checked: Vec<Result<EngineKind, String>> = engines
        .iter()
        .map(|e| e.validate().map(|_| *e).map_err(|err| err.to_string()))
        .collect();
    let results = run_cells(exp, &checked, &starts, exec);

    let mut rows: Vec<CompareRow> = engines
        .iter()
        .zip(results)
        .map(|(engine, result)| match result {
            Ok(runs) => {
                let (accuracy, ratio) = stats(&runs);
                CompareRow {
                    engine: engine.label(),
                    status: "ok".into(),
                    error: None,
                    accuracy: Some(accuracy),
                    backprop_ratio: Some(ratio),
                    acceleration_analytic: Some(mean(runs.iter().map(|r| r.acceleration_analytic))),
                    epoch_seconds_mean: Some(mean(runs.iter().map(|r| r.mean_epoch_seconds))),
                    time_ratio_vs_baseline: None,
                    runs,
                }
            }
            Err(msg) => CompareRow {
                engine: engine.label(),
                status: "failed".into(),
                error: Some(msg),
                accuracy: None,
                backprop_ratio: None,
                acceleration_analytic: None,
                epoch_seconds_mean: None,
                time_ratio_vs_baseline: None,
                runs: Vec::new(),
            },
        })
        .collect();

    let baseline = engines
        .iter()
        .zip(&rows)
        .find(|(e, r)| matches!(e, EngineKind::Full) && r.status == "ok")
        .and_then(|(_, r)| r.epoch_seconds_mean);
    if let Some(base) = baseline.filter(|b| *b > 0.0) {
        for row in &mut rows {
            row.time_ratio_vs_baseline = row.epoch_seconds_mean.map(|t| t / base);
        }
    }

    let digests: Vec<String> = starts.iter().map(|s| s.digest.clone()).collect();
    let shared_initial_weights = rows
        .iter()
        .flat_map(|r| &r.runs)
        .all(|run| starts.iter().any(|s| s.seed == run.seed && s.digest == run.initial_weights_sha256));
    let pretrain_accuracy = starts.iter().map(|s| s.pretrain_accuracy).collect::<Option<Vec<_>>>();
    Ok(CompareReport {
        mode: exp.config.mode,
        seeds: seeds.to_vec(),
        epochs: exp.config.epochs,
        initial_weights_sha256: digests,
        shared_initial_weights,
        pretrain_accuracy,
        rows,
    })
}

/// Cross product `s_min × s_max × zeta`, `s_min` varying slowest. Cells whose
/// parameters are invalid (e.g. `s_min > s_max`) are reported as failed.
pub fn sweep_cells(s_min: &[f64], s_max: &[f64], zeta: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut cells = Vec::with_capacity(s_min.len() * s_max.len() * zeta.len());
    for &a in s_min {
        for &b in s_max {
            for &z in zeta {
                cells.push((a, b, z));
            }
        }
    }
    cells
}

fn recommended(cfg: TinyPropConfig) -> Option<String> {
    if cfg == TinyPropConfig::SCRATCH {
        Some("scratch".into())
    } else if cfg == TinyPropConfig::FINE_TUNE {
        Some("fine-tune".into())
    } else {
        None
    }
}

pub fn run_sweep(
    exp: &Experiment<'_>,
    cells: &[(f64, f64, f64)],
    seeds: &[u64],
    exec: Execution,
) -> Result<SweepReport> {
    exp.config.validate()?;
    let starts = starts(exp, seeds, exec)?;
    let engines: Vec<Result<EngineKind, String>> = cells
        .iter()
        .map(|&(a, b, z)| {
            TinyPropConfig::new(a, b, z)
                .map(EngineKind::TinyProp)
                .map_err(|err| err.to_string())
        })
        .collect();
    let results = run_cells(exp, &engines, &starts, exec);

    let rows = cells
        .iter()
        .zip(results)
        .map(|(&(s_min, s_max, zeta), result)| {
            let recommended_default = recommended(TinyPropConfig { s_min, s_max, zeta });
            match result {
                Ok(runs) => {
                    let (accuracy, ratio) = stats(&runs);
                    SweepRow {
                        s_min,
                        s_max,
                        zeta,
                        status: "ok".into(),
                        error: None,
                        accuracy: Some(accuracy),
                        backprop_ratio: Some(ratio),
                        recommended_default,
                        runs,
                    }
                }
                Err(msg) => SweepRow {
                    s_min,
                    s_max,
                    zeta,
                    status: "failed".into(),
                    error: Some(msg),
                    accuracy: None,
                    backprop_ratio: None,
                    recommended_default,
                    runs: Vec::new(),
                },
            }
        })
        .collect();
    Ok(SweepReport {
        mode: exp.config.mode,
        seeds: seeds.to_vec(),
        epochs: exp.config.epochs,
        rows,
    })
}
