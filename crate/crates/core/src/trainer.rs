//! Online SGD over any backward engine, scratch and fine-tune protocols,
//! and the per-step metrics trace.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{dense_backward_macs, Engine, EngineKind, GradientSet, LayerStep};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::network::{argmax, Network};
use crate::par::Execution;

// ChaCha stream ids so sample order never shares randomness with weight init.
const ORDER_STREAM: u64 = 1;
const PRETRAIN_ORDER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Scratch,
    FineTune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub engine: EngineKind,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Test accuracy the dense pretraining must reach before fine-tuning starts.
    pub pretrain_target_accuracy: f64,
    pub pretrain_max_epochs: usize,
    /// Pretraining checks test accuracy every this many samples (and at every epoch end).
    pub pretrain_eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            engine: EngineKind::Full,
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 1,
            seed: 0,
            mode: Mode::Scratch,
            pretrain_target_accuracy: 0.85,
            pretrain_max_epochs: 20,
            pretrain_eval_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.mode == Mode::FineTune {
            if !(self.pretrain_target_accuracy > 0.0 && self.pretrain_target_accuracy < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "pretrain_target_accuracy must be in (0, 1), got {}",
                    self.pretrain_target_accuracy
                )));
            }
            if self.pretrain_max_epochs == 0 || self.pretrain_eval_interval == 0 {
                return Err(Error::InvalidArgument(
                    "pretrain_max_epochs and pretrain_eval_interval must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f32,
    pub layers: Vec<LayerStep>,
    pub macs_sparse: u64,
    pub macs_dense: u64,
    /// Wall time of forward + backward + update.
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub steps: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub engine: String,
    pub mode: Mode,
    pub seed: u64,
    pub final_accuracy: f64,
    pub mean_backprop_ratio: f64,
    /// Dense-equivalent backward MACs over counted backward MACs.
    pub acceleration_analytic: f64,
    pub epoch_seconds: Vec<f64>,
    /// `(N^l, N^{l-1})` per layer.
    pub layer_dims: Vec<(usize, usize)>,
    pub steps_per_epoch: usize,
    pub pretrain: Option<PretrainSummary>,
    pub trace: Vec<StepMetrics>,
}

impl RunReport {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            return 0.0;
        }
        self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
    }

    /// Mean realized rate of `layer` (1-based) within each epoch.
    pub fn mean_rate_by_epoch(&self, layer: usize) -> Vec<f64> {
        let epochs = self.trace.last().map_or(0, |s| s.epoch + 1);
        let mut sums = vec![(0.0, 0usize); epochs];
        for s in &self.trace {
            let slot = &mut sums[s.epoch];
            slot.0 += s.layers[layer - 1].rate;
            slot.1 += 1;
        }
        sums.into_iter()
            .map(|(sum, n)| if n == 0 { 0.0 } else { sum / n as f64 })
            .collect()
    }
}

/// `W -= lr · δ_W`, `b -= lr · δ_b` on the selected rows only.
pub fn sgd_step(net: &mut Network, grads: &GradientSet, lr: f32) -> Result<()> {
    if grads.layers.len() != net.depth() {
        return Err(Error::dim(
            "sgd_step",
            format!("{} layer gradients for {} layers", grads.layers.len(), net.depth()),
        ));
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        let sel = g.selection();
        if sel.bound() != layer.width() || g.weights.rows.cols() != layer.input_width() {
            return Err(Error::dim(
                "sgd_step",
                format!(
                    "gradient {}x{} for a {}x{} layer",
                    sel.bound(),
                    g.weights.rows.cols(),
                    layer.width(),
                    layer.input_width()
                ),
            ));
        }
        for (r, &i) in sel.indices().iter().enumerate() {
            for (w, &d) in layer.weights.row_mut(i).iter_mut().zip(g.weights.rows.row(r)) {
                *w -= lr * d;
            }
            layer.bias[i] -= lr * g.bias[r];
        }
    }
    Ok(())
}

/// Dense running sum of gradients for mini-batches larger than one sample.
struct Accumulator {
    weights: Vec<Vec<f32>>,
    bias: Vec<Vec<f32>>,
    touched: Vec<Vec<bool>>,
}

impl Accumulator {
    fn new(net: &Network) -> Self {
        let dims = net.dims();
        Accumulator {
            weights: dims.iter().map(|&(n, m)| vec![0.0; n * m]).collect(),
            bias: dims.iter().map(|&(n, _)| vec![0.0; n]).collect(),
            touched: dims.iter().map(|&(n, _)| vec![false; n]).collect(),
        }
    }

    fn add(&mut self, grads: &GradientSet) {
        for (l, g) in grads.layers.iter().enumerate() {
            let cols = g.weights.rows.cols();
            for (r, &i) in g.selection().indices().iter().enumerate() {
                for (a, &d) in self.weights[l][i * cols..(i + 1) * cols]
                    .iter_mut()
                    .zip(g.weights.rows.row(r))
                {
                    *a += d;
                }
                self.bias[l][i] += g.bias[r];
                self.touched[l][i] = true;
            }
        }
    }

    fn apply(&mut self, net: &mut Network, lr: f32) {
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let cols = layer.input_width();
            for i in 0..layer.width() {
                if !std::mem::take(&mut self.touched[l][i]) {
                    continue;
                }
                let acc = &mut self.weights[l][i * cols..(i + 1) * cols];
                for (w, a) in layer.weights.row_mut(i).iter_mut().zip(acc.iter_mut()) {
                    *w -= lr * *a;
                    *a = 0.0;
                }
                layer.bias[i] -= lr * std::mem::take(&mut self.bias[l][i]);
            }
        }
    }
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    evaluate_with(net, data, Execution::Parallel)
}

pub fn evaluate_sequential(net: &Network, data: &Dataset) -> Result<f64> {
    evaluate_with(net, data, Execution::Sequential)
}

pub fn evaluate_with(net: &Network, data: &Dataset, exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    if data.input_dim() != net.input_width() {
        return Err(Error::dim(
            "evaluate",
            format!("data dim {}, network input {}", data.input_dim(), net.input_width()),
        ));
    }
    let correct = exec.chunked_sum(data.len(), 256, |i| {
        let out = net.infer(data.features(i)).expect("dimensions checked above");
        usize::from(argmax(&out) == data.label(i))
    });
    Ok(correct as f64 / data.len() as f64)
}

/// `Σ k^l · N^{l-1} / Σ N^l · N^{l-1}` over every step and layer of the trace.
pub fn backprop_ratio(trace: &[StepMetrics], dims: &[(usize, usize)]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let mut done = 0u64;
    let mut total = 0u64;
    for step in trace {
        if step.layers.len() != dims.len() {
            return Err(Error::dim(
                "backprop_ratio",
                format!("{} layers in step {}, {} dims", step.layers.len(), step.step, dims.len()),
            ));
        }
        for (s, &(n, m)) in step.layers.iter().zip(dims) {
            done += (s.k * m) as u64;
            total += (n * m) as u64;
        }
    }
    Ok(done as f64 / total as f64)
}

fn check_data(net: &Network, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} data is empty")));
    }
    if data.input_dim() != net.input_width() || data.num_classes() != net.output_width() {
        return Err(Error::dim(
            "train",
            format!(
                "{what} data has dim {} and {} classes, network is {} -> {}",
                data.input_dim(),
                data.num_classes(),
                net.input_width(),
                net.output_width()
            ),
        ));
    }
    Ok(())
}

fn order_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dense training until `cfg.pretrain_target_accuracy` on `test`.
pub fn pretrain(net: &mut Network, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<PretrainSummary> {
    check_data(net, train, "train")?;
    check_data(net, test, "test")?;
    let mut rng = order_rng(cfg.seed, PRETRAIN_ORDER_STREAM);
    let mut engine = Engine::Full;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;
    let mut accuracy = evaluate(net, test)?;
    if accuracy >= cfg.pretrain_target_accuracy {
        return Ok(PretrainSummary { steps, accuracy });
    }
    for _ in 0..cfg.pretrain_max_epochs {
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            net.forward(train.features(i))?;
            let y = train.one_hot(i);
            let loss = net.cached_loss(&y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step: steps, loss });
            }
            let (grads, _) = engine.backward(net, &y)?;
            sgd_step(net, &grads, cfg.learning_rate)?;
            steps += 1;
            if (pos + 1) % cfg.pretrain_eval_interval == 0 || pos + 1 == order.len() {
                accuracy = evaluate(net, test)?;
                if accuracy >= cfg.pretrain_target_accuracy {
                    return Ok(PretrainSummary { steps, accuracy });
                }
            }
        }
    }
    Err(Error::PretrainTarget {
        epochs: cfg.pretrain_max_epochs,
        accuracy,
        target: cfg.pretrain_target_accuracy,
    })
}

/// Runs `cfg.epochs` epochs with `cfg.engine` from the network's current
/// weights; no pretraining regardless of `cfg.mode`.
pub fn run_epochs(net: &mut Network, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    check_data(net, train, "train")?;
    check_data(net, test, "test")?;
    let mut engine = Engine::new(&cfg.engine, net)?;
    let macs_dense = dense_backward_macs(net);
    let mut rng = order_rng(cfg.seed, ORDER_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut accumulator = (cfg.batch_size > 1).then(|| Accumulator::new(net));
    let batch_lr = cfg.learning_rate / cfg.batch_size as f32;

    let mut trace = Vec::with_capacity(cfg.epochs * train.len());
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_start = Instant::now();
        for (pos, &i) in order.iter().enumerate() {
            let start = Instant::now();
            net.forward(train.features(i))?;
            let y = train.one_hot(i);
            let loss = net.cached_loss(&y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step: trace.len(), loss });
            }
            let (grads, layers) = engine.backward(net, &y)?;
            match accumulator.as_mut() {
                None => sgd_step(net, &grads, cfg.learning_rate)?,
                Some(acc) => {
                    acc.add(&grads);
                    if (pos + 1) % cfg.batch_size == 0 || pos + 1 == order.len() {
                        acc.apply(net, batch_lr);
                    }
                }
            }
            trace.push(StepMetrics {
                step: trace.len(),
                epoch,
                loss,
                layers,
                macs_sparse: grads.macs(),
                macs_dense,
                elapsed_ns: start.elapsed().as_nanos() as u64,
            });
        }
        epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }
    net.clear_caches();

    let layer_dims = net.dims();
    let sparse: u64 = trace.iter().map(|s| s.macs_sparse).sum();
    let dense: u64 = trace.iter().map(|s| s.macs_dense).sum();
    Ok(RunReport {
        engine: cfg.engine.label(),
        mode: cfg.mode,
        seed: cfg.seed,
        final_accuracy: evaluate(net, test)?,
        mean_backprop_ratio: backprop_ratio(&trace, &layer_dims)?,
        acceleration_analytic: dense as f64 / sparse as f64,
        epoch_seconds,
        layer_dims,
        steps_per_epoch: train.len(),
        pretrain: None,
        trace,
    })
}

/// Full protocol: fine-tune mode pretrains densely up to the accuracy gate
/// before switching to `cfg.engine`; scratch mode trains from the given weights.
pub fn train(net: &mut Network, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pre = match cfg.mode {
        Mode::FineTune => Some(pretrain(net, train, test, cfg)?),
        Mode::Scratch => None,
    };
    let mut report = run_epochs(net, train, test, cfg)?;
    report.pretrain = pre;
    Ok(report)
}
