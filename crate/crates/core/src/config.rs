//! Run-config files.
//!
//! A config is TOML: flat `key = value` pairs grouped into `[sections]`.
//! Unknown keys are rejected. Relative paths resolve against the config
//! file's directory. See `configs/` in the repository for complete examples.
//!
//! ```toml
//! [dataset]
//! source = "idx"                  # or "synthetic:anomaly", "synthetic:blobs"
//! train_images = "../data/mnist-subset/train-images-idx3-ubyte.gz"
//! train_labels = "../data/mnist-subset/train-labels-idx1-ubyte.gz"
//! test_images = "../data/mnist-subset/t10k-images-idx3-ubyte.gz"
//! test_labels = "../data/mnist-subset/t10k-labels-idx1-ubyte.gz"
//!
//! [network]
//! widths = [784, 128, 64, 10]
//! hidden_activation = "relu"
//! output_activation = "softmax"
//! loss = "cross_entropy"
//!
//! [engine]
//! kind = "tinyprop"               # "full", "topk" (needs `ratio`), "tinyprop"
//!
//! [trainer]
//! mode = "scratch"
//! epochs = 5
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::adapt::TinyPropConfig;
use crate::backprop::EngineKind;
use crate::datasets::{load_mnist_idx, synth_anomaly, synth_blobs, Dataset, Split};
use crate::error::{Error, Result};
use crate::network::{Activation, LossKind, NetworkSpec};
use crate::trainer::{Mode, TrainConfig};

/// Fixed top-k ratios of the default comparison grid.
pub const DEFAULT_TOPK_RATIOS: [f64; 5] = [0.1, 0.15, 0.2, 0.33, 0.66];
pub const DEFAULT_SEEDS: usize = 5;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    network: RawNetwork,
    #[serde(default)]
    engine: RawEngine,
    tinyprop: Option<RawTinyProp>,
    #[serde(default)]
    trainer: RawTrainer,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    compare: RawCompare,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    source: Option<String>,
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    limit: Option<usize>,
    test_limit: Option<usize>,
    n: Option<usize>,
    classes: Option<usize>,
    seed: Option<u64>,
    test_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    widths: Option<Vec<usize>>,
    hidden_activation: Option<String>,
    output_activation: Option<String>,
    loss: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    kind: Option<String>,
    ratio: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTinyProp {
    s_min: f64,
    s_max: f64,
    zeta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrainer {
    mode: Option<String>,
    learning_rate: Option<f32>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    pretrain_target_accuracy: Option<f64>,
    pretrain_max_epochs: Option<usize>,
    pretrain_eval_interval: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompare {
    engines: Option<Vec<String>>,
    seeds: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    s_min: Vec<f64>,
    s_max: Vec<f64>,
    zeta: Vec<f64>,
    repeats: Option<usize>,
}

/// Where the train/test splits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        limit: Option<usize>,
        test_limit: Option<usize>,
    },
    Anomaly {
        n: usize,
        seed: u64,
        test_fraction: f64,
    },
    Blobs {
        n: usize,
        classes: usize,
        seed: u64,
        test_fraction: f64,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
                test_limit,
            } => Ok((
                load_mnist_idx(train_images, train_labels, *limit, Split::Train)?,
                load_mnist_idx(test_images, test_labels, *test_limit, Split::Test)?,
            )),
            DatasetSpec::Anomaly { n, seed, test_fraction } => {
                synth_anomaly(*n, *seed)?.split_off_test(*test_fraction)
            }
            DatasetSpec::Blobs {
                n,
                classes,
                seed,
                test_fraction,
            } => synth_blobs(*n, *classes, *seed)?.split_off_test(*test_fraction),
        }
    }

    fn set_limit(&mut self, new: usize) {
        match self {
            DatasetSpec::Idx { limit, .. } => *limit = Some(new),
            DatasetSpec::Anomaly { n, .. } | DatasetSpec::Blobs { n, .. } => *n = new,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub s_min: Vec<f64>,
    pub s_max: Vec<f64>,
    pub zeta: Vec<f64>,
    pub repeats: usize,
}

/// Validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    /// Controller settings used wherever an engine is `tinyprop`.
    pub tinyprop: TinyPropConfig,
    pub out_dir: PathBuf,
    pub compare_engines: Vec<EngineKind>,
    pub compare_seeds: usize,
    pub sweep: Option<SweepSpec>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub limit: Option<usize>,
}

fn cfg_err(field: &str, detail: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {detail}"))
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| cfg_err(field, "missing required field"))
}

fn existing_file(base: &Path, value: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    let path = base.join(required(value, field)?);
    if !path.is_file() {
        return Err(cfg_err(field, format!("file not found: {}", path.display())));
    }
    Ok(path)
}

fn parse_activation(s: &str, field: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        "identity" => Ok(Activation::Identity),
        "softmax" => Ok(Activation::SoftmaxCe),
        other => Err(cfg_err(
            field,
            format!("unknown activation {other:?} (relu, sigmoid, identity, softmax)"),
        )),
    }
}

/// Parses `full`, `topk:<ratio>`, `tinyprop` or `tinyprop:<s_min>,<s_max>,<zeta>`.
pub fn parse_engine(s: &str, tinyprop: TinyPropConfig) -> Result<EngineKind> {
    let bad = |detail: String| Error::InvalidArgument(format!("engine {s:?}: {detail}"));
    let kind = match s.split_once(':') {
        None if s == "full" => EngineKind::Full,
        None if s == "tinyprop" => EngineKind::TinyProp(tinyprop),
        Some(("topk", r)) => EngineKind::FixedTopK {
            ratio: r.trim().parse().map_err(|e| bad(format!("{e}")))?,
        },
        Some(("tinyprop", params)) => {
            let v: Vec<f64> = params
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("{e}")))?;
            match v.as_slice() {
                &[s_min, s_max, zeta] => EngineKind::TinyProp(TinyPropConfig::new(s_min, s_max, zeta)?),
                _ => return Err(bad("expected tinyprop:<s_min>,<s_max>,<zeta>".into())),
            }
        }
        _ => return Err(bad("expected full, topk:<ratio> or tinyprop".into())),
    };
    kind.validate()?;
    Ok(kind)
}

impl RunConfig {
    pub fn from_path(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse_str(&text, base, overrides)
            .map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })
    }

    /// Parses and validates; `base` anchors relative paths.
    pub fn parse_str(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let trainer = raw.trainer;
        let mode = match trainer.mode.as_deref().unwrap_or("scratch") {
            "scratch" => Mode::Scratch,
            "fine-tune" | "fine_tune" | "finetune" => Mode::FineTune,
            other => return Err(cfg_err("trainer.mode", format!("unknown mode {other:?} (scratch, fine-tune)"))),
        };

        let tinyprop = match raw.tinyprop {
            Some(t) => TinyPropConfig::new(t.s_min, t.s_max, t.zeta).map_err(|e| cfg_err("tinyprop", e))?,
            None if mode == Mode::FineTune => TinyPropConfig::FINE_TUNE,
            None => TinyPropConfig::SCRATCH,
        };

        let engine = match raw.engine.kind.as_deref().unwrap_or("full") {
            "full" => EngineKind::Full,
            "tinyprop" => EngineKind::TinyProp(tinyprop),
            "topk" => EngineKind::FixedTopK {
                ratio: required(raw.engine.ratio, "engine.ratio")?,
            },
            other => return Err(cfg_err("engine.kind", format!("unknown engine {other:?} (full, topk, tinyprop)"))),
        };
        engine.validate().map_err(|e| cfg_err("engine", e))?;

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            engine,
            learning_rate: trainer.learning_rate.unwrap_or(defaults.learning_rate),
            epochs: trainer.epochs.unwrap_or(defaults.epochs),
            batch_size: trainer.batch_size.unwrap_or(defaults.batch_size),
            seed: overrides.seed.or(trainer.seed).unwrap_or(defaults.seed),
            mode,
            pretrain_target_accuracy: trainer
                .pretrain_target_accuracy
                .unwrap_or(defaults.pretrain_target_accuracy),
            pretrain_max_epochs: trainer.pretrain_max_epochs.unwrap_or(defaults.pretrain_max_epochs),
            pretrain_eval_interval: trainer
                .pretrain_eval_interval
                .unwrap_or(defaults.pretrain_eval_interval),
        };
        train.validate().map_err(|e| cfg_err("trainer", e))?;

        let net = raw.network;
        let loss = match net.loss.as_deref().unwrap_or("cross_entropy") {
            "cross_entropy" => LossKind::CrossEntropy,
            "mse" => LossKind::Mse,
            other => return Err(cfg_err("network.loss", format!("unknown loss {other:?} (cross_entropy, mse)"))),
        };
        let network = NetworkSpec {
            widths: required(net.widths, "network.widths")?,
            hidden: parse_activation(net.hidden_activation.as_deref().unwrap_or("relu"), "network.hidden_activation")?,
            output: parse_activation(net.output_activation.as_deref().unwrap_or("softmax"), "network.output_activation")?,
            loss,
        };
        if network.widths.len() < 2 || network.widths.contains(&0) {
            return Err(cfg_err("network.widths", "need at least two non-zero widths"));
        }
        if network.hidden == Activation::SoftmaxCe {
            return Err(cfg_err("network.hidden_activation", "softmax is only allowed on the output layer"));
        }
        if network.output == Activation::SoftmaxCe && loss != LossKind::CrossEntropy {
            return Err(cfg_err("network.output_activation", "softmax output requires loss = \"cross_entropy\""));
        }

        let ds = raw.dataset;
        let test_fraction = ds.test_fraction.unwrap_or(0.2);
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(cfg_err("dataset.test_fraction", "must be in (0, 1)"));
        }
        let mut dataset = match required(ds.source, "dataset.source")?.as_str() {
            "idx" => DatasetSpec::Idx {
                train_images: existing_file(base, ds.train_images, "dataset.train_images")?,
                train_labels: existing_file(base, ds.train_labels, "dataset.train_labels")?,
                test_images: existing_file(base, ds.test_images, "dataset.test_images")?,
                test_labels: existing_file(base, ds.test_labels, "dataset.test_labels")?,
                limit: ds.limit,
                test_limit: ds.test_limit,
            },
            "synthetic:anomaly" => DatasetSpec::Anomaly {
                n: ds.n.unwrap_or(2000),
                seed: ds.seed.unwrap_or(0),
                test_fraction,
            },
            "synthetic:blobs" => DatasetSpec::Blobs {
                n: ds.n.unwrap_or(500),
                classes: ds.classes.unwrap_or(2),
                seed: ds.seed.unwrap_or(0),
                test_fraction,
            },
            other => {
                return Err(cfg_err(
                    "dataset.source",
                    format!("unknown source {other:?} (idx, synthetic:anomaly, synthetic:blobs)"),
                ))
            }
        };
        if let Some(limit) = overrides.limit {
            dataset.set_limit(limit);
        }
        let (input_dim, classes) = match &dataset {
            DatasetSpec::Idx { .. } => (784, 10),
            DatasetSpec::Anomaly { n, .. } => {
                if *n < 2 {
                    return Err(cfg_err("dataset.n", "anomaly data needs n >= 2"));
                }
                (crate::datasets::ANOMALY_DIM, 2)
            }
            DatasetSpec::Blobs { n, classes, .. } => {
                if *classes < 2 || *n < 2 {
                    return Err(cfg_err("dataset", "blobs need classes >= 2 and n >= 2"));
                }
                (2, *classes)
            }
        };
        let widths = &network.widths;
        if widths[0] != input_dim || widths[widths.len() - 1] != classes {
            return Err(cfg_err(
                "network.widths",
                format!("dataset needs input width {input_dim} and {classes} outputs, got {widths:?}"),
            ));
        }

        let out_dir = match overrides.out.clone() {
            Some(p) => p,
            None => base.join(raw.output.dir.unwrap_or_else(|| PathBuf::from("runs"))),
        };

        let compare_engines = match raw.compare.engines {
            Some(list) => list
                .iter()
                .map(|s| parse_engine(s, tinyprop))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| cfg_err("compare.engines", e))?,
            None => default_grid(tinyprop),
        };
        if compare_engines.is_empty() {
            return Err(cfg_err("compare.engines", "empty engine list"));
        }
        let compare_seeds = raw.compare.seeds.unwrap_or(DEFAULT_SEEDS);
        if compare_seeds == 0 {
            return Err(cfg_err("compare.seeds", "must be >= 1"));
        }

        let sweep = match raw.sweep {
            Some(s) => {
                for (field, values) in [("sweep.s_min", &s.s_min), ("sweep.s_max", &s.s_max), ("sweep.zeta", &s.zeta)] {
                    if values.is_empty() {
                        return Err(cfg_err(field, "empty grid"));
                    }
                }
                let repeats = s.repeats.unwrap_or(DEFAULT_SEEDS);
                if repeats == 0 {
                    return Err(cfg_err("sweep.repeats", "must be >= 1"));
                }
                Some(SweepSpec {
                    s_min: s.s_min,
                    s_max: s.s_max,
                    zeta: s.zeta,
                    repeats,
                })
            }
            None => None,
        };

        Ok(RunConfig {
            dataset,
            network,
            train,
            tinyprop,
            out_dir,
            compare_engines,
            compare_seeds,
            sweep,
        })
    }

    /// Seeds used by grid commands: `train.seed, train.seed + 1, ...`.
    pub fn seeds(&self, count: usize) -> Vec<u64> {
        (0..count as u64).map(|i| self.train.seed + i).collect()
    }
}

/// Baseline, every default fixed ratio, then the adaptive engine.
pub fn default_grid(tinyprop: TinyPropConfig) -> Vec<EngineKind> {
    std::iter::once(EngineKind::Full)
        .chain(DEFAULT_TOPK_RATIOS.iter().map(|&ratio| EngineKind::FixedTopK { ratio }))
        .chain(std::iter::once(EngineKind::TinyProp(tinyprop)))
        .collect()
}
