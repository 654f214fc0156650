//! Dense feed-forward networks: forward pass with caches, losses and the
//! output-layer error.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, matvec_into, Matrix};

/// Clamp applied to probabilities before taking a logarithm.
pub const LOG_EPSILON: f32 = 1e-7;

const WEIGHTS_MAGIC: &[u8; 4] = b"TPNW";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    /// Softmax fused with cross-entropy; output layer only.
    SoftmaxCe,
}

impl Activation {
    /// Element-wise value; `SoftmaxCe` is vector-valued and handled by the layer.
    pub fn apply(self, z: f32) -> f32 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity | Activation::SoftmaxCe => z,
        }
    }

    /// `f'(z)`. ReLU has derivative 0 at 0. The fused softmax passes its
    /// error through unchanged, so its derivative is reported as 1.
    pub fn derivative(self, z: f32) -> f32 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Identity | Activation::SoftmaxCe => 1.0,
        }
    }
}

fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

pub fn softmax(z: &[f32]) -> Vec<f32> {
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Loss of `prediction` against `y`.
///
/// For cross-entropy `prediction` holds logits: the loss is `-Σ yᵢ ln softmax(prediction)ᵢ`.
pub fn loss(prediction: &[f32], y: &[f32], kind: LossKind) -> Result<f32> {
    if prediction.len() != y.len() || y.is_empty() {
        return Err(Error::dim(
            "loss",
            format!("prediction {}, target {}", prediction.len(), y.len()),
        ));
    }
    Ok(match kind {
        LossKind::Mse => {
            let sum: f32 = prediction
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            sum / y.len() as f32
        }
        LossKind::CrossEntropy => {
            let p = softmax(prediction);
            -p.iter()
                .zip(y)
                .map(|(&pi, &yi)| yi * pi.max(LOG_EPSILON).ln())
                .sum::<f32>()
        }
    })
}

/// Gradient of [`loss`] with respect to `prediction`.
pub fn loss_gradient(prediction: &[f32], y: &[f32], kind: LossKind) -> Vec<f32> {
    match kind {
        LossKind::Mse => {
            let scale = 2.0 / y.len() as f32;
            prediction.iter().zip(y).map(|(p, t)| scale * (p - t)).collect()
        }
        LossKind::CrossEntropy => softmax(prediction)
            .iter()
            .zip(y)
            .map(|(p, t)| p - t)
            .collect(),
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Vec<f32>,
    pre: Vec<f32>,
    out: Vec<f32>,
}

/// One dense layer: `z = W·a + b`, `a' = f(z)`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f32>,
    pub activation: Activation,
    cache: LayerCache,
    cached: bool,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim(
                "Layer::new",
                format!("{} biases for {} neurons", bias.len(), weights.rows()),
            ));
        }
        check_finite("bias", &bias)?;
        Ok(Layer {
            weights,
            bias,
            activation,
            cache: LayerCache::default(),
            cached: false,
        })
    }

    /// Neurons in this layer (`N^l`).
    pub fn width(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_width(&self) -> usize {
        self.weights.cols()
    }

    fn cache(&self) -> Result<&LayerCache> {
        if self.cached {
            Ok(&self.cache)
        } else {
            Err(Error::Usage("backward pass requested before forward".into()))
        }
    }

    /// Cached `a^{l-1}`.
    pub fn input(&self) -> Result<&[f32]> {
        Ok(&self.cache()?.input)
    }

    /// Cached `z^l`.
    pub fn preactivation(&self) -> Result<&[f32]> {
        Ok(&self.cache()?.pre)
    }

    /// Cached `a^l`.
    pub fn output(&self) -> Result<&[f32]> {
        Ok(&self.cache()?.out)
    }

    fn eval(&self, x: &[f32], pre: &mut [f32], out: &mut [f32]) -> Result<()> {
        matvec_into(&self.weights, x, pre)?;
        for (z, b) in pre.iter_mut().zip(&self.bias) {
            *z += b;
        }
        if self.activation == Activation::SoftmaxCe {
            out.copy_from_slice(&softmax(pre));
        } else {
            for (o, &z) in out.iter_mut().zip(pre.iter()) {
                *o = self.activation.apply(z);
            }
        }
        Ok(())
    }
}

/// Gradient entering the backward pipeline at the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    /// `∇_{a^L} L`, or `δ_z^L` directly when `fused` is set.
    pub delta: Vec<f32>,
    /// Softmax + cross-entropy: `delta` is already `softmax(z^L) - y`.
    pub fused: bool,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    loss: LossKind,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].input_width() != pair[0].width() {
                return Err(Error::dim(
                    "Network",
                    format!(
                        "layer {} outputs {} but layer {} expects {}",
                        l + 1,
                        pair[0].width(),
                        l + 2,
                        pair[1].input_width()
                    ),
                ));
            }
        }
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            if layer.activation == Activation::SoftmaxCe && l != last {
                return Err(Error::InvalidArgument(
                    "softmax activation is only allowed on the output layer".into(),
                ));
            }
        }
        if layers[last].activation == Activation::SoftmaxCe && loss != LossKind::CrossEntropy {
            return Err(Error::InvalidArgument(
                "softmax output requires the cross-entropy loss".into(),
            ));
        }
        Ok(Network { layers, loss })
    }

    /// Random network with uniform ±sqrt(6 / (fan_in + fan_out)) weights and zero biases.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        loss: LossKind,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths {widths:?}: need an input and at least one layer, all non-zero"
            )));
        }
        let count = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                let activation = if l + 1 == count { output } else { hidden };
                Layer::new(
                    Matrix::from_vec(fan_out, fan_in, data)?,
                    vec![0.0; fan_out],
                    activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_layers(layers, loss)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Layer count `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].width()
    }

    /// `(N^l, N^{l-1})` for every layer.
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.width(), l.input_width()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.width() * (l.input_width() + 1))
            .sum()
    }

    /// Forward pass that fills every layer's caches; returns `a^L`.
    pub fn forward(&mut self, x: &[f32]) -> Result<&[f32]> {
        if x.len() != self.input_width() {
            return Err(Error::dim(
                "forward",
                format!("input {} for a network expecting {}", x.len(), self.input_width()),
            ));
        }
        for l in 0..self.layers.len() {
            let (done, rest) = self.layers.split_at_mut(l);
            let layer = &mut rest[0];
            let input = if l == 0 { x } else { &done[l - 1].cache.out };
            let mut cache = std::mem::take(&mut layer.cache);
            cache.input.clear();
            cache.input.extend_from_slice(input);
            cache.pre.resize(layer.width(), 0.0);
            cache.out.resize(layer.width(), 0.0);
            layer.eval(&cache.input, &mut cache.pre, &mut cache.out)?;
            layer.cache = cache;
            layer.cached = true;
        }
        Ok(&self.layers[self.layers.len() - 1].cache.out)
    }

    /// Cache-free forward pass; safe to call from several threads.
    pub fn infer(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_width() {
            return Err(Error::dim(
                "infer",
                format!("input {} for a network expecting {}", x.len(), self.input_width()),
            ));
        }
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut pre = vec![0.0; layer.width()];
            let mut out = vec![0.0; layer.width()];
            layer.eval(&current, &mut pre, &mut out)?;
            current = out;
        }
        Ok(current)
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.cached = false;
        }
    }

    fn output_layer(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    /// What the loss sees: logits for cross-entropy after a fused softmax,
    /// otherwise the output activations.
    fn loss_input(&self) -> Result<&[f32]> {
        let last = self.output_layer();
        if last.activation == Activation::SoftmaxCe {
            last.preactivation()
        } else {
            last.output()
        }
    }

    /// Loss of the cached forward pass.
    pub fn cached_loss(&self, y: &[f32]) -> Result<f32> {
        loss(self.loss_input()?, y, self.loss)
    }

    pub fn output_gradient(&self, y: &[f32]) -> Result<OutputGradient> {
        let input = self.loss_input()?;
        if y.len() != input.len() {
            return Err(Error::dim(
                "output_gradient",
                format!("target {} for {} outputs", y.len(), input.len()),
            ));
        }
        Ok(OutputGradient {
            delta: loss_gradient(input, y, self.loss),
            fused: self.output_layer().activation == Activation::SoftmaxCe,
        })
    }

    /// `δ_z^L = f'(z^L) ⊙ ∇_{a^L} L`, or `softmax(z^L) - y` for the fused output.
    pub fn output_error(&self, y: &[f32]) -> Result<Vec<f32>> {
        let grad = self.output_gradient(y)?;
        if grad.fused {
            return Ok(grad.delta);
        }
        let last = self.output_layer();
        Ok(grad
            .delta
            .iter()
            .zip(last.preactivation()?)
            .map(|(g, &z)| g * last.activation.derivative(z))
            .collect())
    }

    /// Flat little-endian layout: magic, layer count, `(rows, cols)` per
    /// layer, then each layer's weights (row-major) followed by its biases.
    pub fn write_weights<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.width() as u32).to_le_bytes())?;
            w.write_all(&(layer.input_width() as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for v in layer.weights.as_slice().iter().chain(&layer.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn weights_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.parameter_count() * 4);
        self.write_weights(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the serialized weights, hex encoded.
    pub fn weights_digest(&self) -> String {
        hex::encode(Sha256::digest(self.weights_bytes()))
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.weights_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Overwrites this network's parameters; the file's shapes must match.
    pub fn read_weights<R: Read>(&mut self, mut r: R, source: &Path) -> Result<()> {
        let fmt = |detail: String| Error::Format {
            path: source.to_path_buf(),
            detail,
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(source, e))?;
        let mut words = bytes.get(4..).unwrap_or_default().chunks_exact(4);
        if bytes.get(..4) != Some(WEIGHTS_MAGIC.as_slice()) {
            return Err(fmt("not a weights file (bad magic)".into()));
        }
        let mut next = || {
            words
                .next()
                .map(|w| [w[0], w[1], w[2], w[3]])
                .ok_or_else(|| fmt("truncated weights file".into()))
        };
        let count = u32::from_le_bytes(next()?) as usize;
        if count != self.layers.len() {
            return Err(fmt(format!(
                "{count} layers in file, network has {}",
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let rows = u32::from_le_bytes(next()?) as usize;
            let cols = u32::from_le_bytes(next()?) as usize;
            if (rows, cols) != (layer.width(), layer.input_width()) {
                return Err(fmt(format!(
                    "layer {} is {rows}x{cols} in file, {}x{} in network",
                    l + 1,
                    layer.width(),
                    layer.input_width()
                )));
            }
        }
        let mut values = Vec::with_capacity(self.parameter_count());
        for _ in 0..self.parameter_count() {
            values.push(f32::from_le_bytes(next()?));
        }
        if words.next().is_some() {
            return Err(fmt("trailing bytes after weights".into()));
        }
        check_finite("weights file", &values)?;
        let mut it = values.into_iter();
        for layer in &mut self.layers {
            for v in layer.weights.as_mut_slice() {
                *v = it.next().unwrap_or_default();
            }
            for v in &mut layer.bias {
                *v = it.next().unwrap_or_default();
            }
            layer.cached = false;
        }
        Ok(())
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        self.read_weights(std::io::BufReader::new(file), path)
    }
}

/// Architecture description: layer widths including the input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub loss: LossKind,
}

impl NetworkSpec {
    /// Fresh network whose weights depend only on `seed`.
    pub fn build(&self, seed: u64) -> Result<Network> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Network::init(&self.widths, self.hidden, self.output, self.loss, &mut rng)
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(rows: &[&[f32]], bias: &[f32], act: Activation) -> Layer {
        Layer::new(Matrix::from_rows(rows).unwrap(), bias.to_vec(), act).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let l = Layer::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        let l = layer(&[&[1.0], &[2.0]], &[-5.0, -5.0], Activation::Relu);
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn two_layer_hand_computation() {
        // z1 = [[1,-1],[2,0.5]]·[1,2] + [0,1] = [-1, 4]; relu -> [0, 4]
        // z2 = [[0.5,1],[-1,2]]·[0,4] + [1,0] = [5, 8]
        let l1 = layer(&[&[1.0, -1.0], &[2.0, 0.5]], &[0.0, 1.0], Activation::Relu);
        let l2 = layer(&[&[0.5, 1.0], &[-1.0, 2.0]], &[1.0, 0.0], Activation::Identity);
        let mut net = Network::from_layers(vec![l1, l2], LossKind::Mse).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), &[5.0, 8.0]);
        assert_eq!(net.layers()[0].output().unwrap(), &[0.0, 4.0]);
        assert_eq!(net.infer(&[1.0, 2.0]).unwrap(), vec![5.0, 8.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let l = Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shape_chain_and_softmax_placement_validated() {
        let a = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(Matrix::zeros(2, 4), vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Network::from_layers(vec![a.clone(), b], LossKind::Mse).is_err());
        let s = Layer::new(Matrix::zeros(2, 3), vec![0.0; 2], Activation::SoftmaxCe).unwrap();
        assert!(Network::from_layers(vec![a.clone(), s.clone()], LossKind::Mse).is_err());
        assert!(Network::from_layers(vec![a, s], LossKind::CrossEntropy).is_ok());
        assert!(Network::from_layers(vec![], LossKind::Mse).is_err());
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(&[0.3, 0.7], &[0.3, 0.7], LossKind::Mse).unwrap(), 0.0);
        assert_eq!(loss(&[1.0, 0.0], &[0.0, 0.0], LossKind::Mse).unwrap(), 0.5);
        let mut y = vec![0.0; 10];
        y[3] = 1.0;
        let ce = loss(&[0.25; 10], &y, LossKind::CrossEntropy).unwrap();
        assert!((ce - 10f32.ln()).abs() < 1e-6, "{ce}");
        assert!(loss(&[1.0], &[1.0, 2.0], LossKind::Mse).is_err());
    }

    #[test]
    fn cross_entropy_log_is_clamped() {
        let ce = loss(&[-1000.0, 1000.0], &[1.0, 0.0], LossKind::CrossEntropy).unwrap();
        assert!((ce + LOG_EPSILON.ln()).abs() < 1e-4);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z: Vec<f32> = (0..10).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let p = softmax(&z);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fused_output_error_zero_on_perfect_prediction() {
        let l = Layer::new(Matrix::zeros(2, 1), vec![0.0; 2], Activation::SoftmaxCe).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::CrossEntropy).unwrap();
        net.forward(&[1.0]).unwrap();
        // zero weights -> uniform softmax; a uniform target is matched exactly
        assert_eq!(net.output_error(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_mse_output_error() {
        let l = Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        net.forward(&[1.0, -3.0]).unwrap();
        assert_eq!(net.output_error(&[0.0, 1.0]).unwrap(), vec![1.0, -4.0]);
    }

    #[test]
    fn output_error_needs_forward() {
        let l = Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        assert!(matches!(net.output_error(&[0.0, 0.0]), Err(Error::Usage(_))));
    }

    /// Central differences in f64 so the oracle itself adds no f32 noise.
    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn sigmoid64(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn sigmoid_mse_output_error_matches_finite_difference() {
        // one neuron: L(z) = (sigmoid(z) - y)^2
        let (z, y) = (0.37f32, 0.9f32);
        let l = Layer::new(Matrix::from_vec(1, 1, vec![1.0]).unwrap(), vec![0.0], Activation::Sigmoid).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        net.forward(&[z]).unwrap();
        let got = net.output_error(&[y]).unwrap()[0] as f64;
        let want = central_diff(|z| (sigmoid64(z) - y as f64).powi(2), z as f64, 1e-4);
        assert!(((got - want) / want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn activation_derivatives_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
            for _ in 0..100 {
                let z: f64 = rng.gen_range(-4.0..4.0);
                if act == Activation::Relu && z.abs() < 1e-2 {
                    continue;
                }
                let f = |v: f64| match act {
                    Activation::Relu => v.max(0.0),
                    Activation::Sigmoid => sigmoid64(v),
                    _ => v,
                };
                let want = central_diff(f, z, 1e-4);
                let got = act.derivative(z as f32) as f64;
                let err = (got - want).abs() / want.abs().max(1e-6);
                // derivative of 0 on the flat ReLU side
                if want == 0.0 {
                    assert_eq!(got, 0.0);
                } else {
                    assert!(err < 1e-3, "{act:?} at {z}: {got} vs {want}");
                }
            }
        }
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn output_error_matches_finite_difference_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (out_act, loss_kind) in [
            (Activation::SoftmaxCe, LossKind::CrossEntropy),
            (Activation::Sigmoid, LossKind::Mse),
            (Activation::Identity, LossKind::Mse),
        ] {
            let mut net = Network::init(&[3, 4, 3], Activation::Relu, out_act, loss_kind, &mut rng).unwrap();
            let x: Vec<f32> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = match loss_kind {
                LossKind::CrossEntropy => vec![0.0, 1.0, 0.0],
                LossKind::Mse => vec![0.2, -0.4, 0.9],
            };
            net.forward(&x).unwrap();
            let z: Vec<f64> = net.layers()[1].preactivation().unwrap().iter().map(|&v| v as f64).collect();
            let got = net.output_error(&y).unwrap();
            // loss as a function of z^L, evaluated in f64
            let loss_of = |z: &[f64]| -> f64 {
                match loss_kind {
                    LossKind::CrossEntropy => {
                        let m = z.iter().cloned().fold(f64::MIN, f64::max);
                        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                        -z.iter().zip(&y).map(|(v, &t)| t as f64 * ((v - m) - s.ln())).sum::<f64>()
                    }
                    LossKind::Mse => {
                        let a: Vec<f64> = z.iter().map(|&v| if out_act == Activation::Sigmoid { sigmoid64(v) } else { v }).collect();
                        a.iter().zip(&y).map(|(p, &t)| (p - t as f64).powi(2)).sum::<f64>() / y.len() as f64
                    }
                }
            };
            for i in 0..z.len() {
                let want = central_diff(
                    |v| {
                        let mut zz = z.clone();
                        zz[i] = v;
                        loss_of(&zz)
                    },
                    z[i],
                    1e-5,
                );
                let err = (got[i] as f64 - want).abs() / want.abs().max(1e-4);
                assert!(err < 1e-3, "{out_act:?} component {i}: {} vs {want}", got[i]);
            }
        }
    }

    #[test]
    fn weights_round_trip_and_shape_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::init(&[4, 3, 2], Activation::Relu, Activation::SoftmaxCe, LossKind::CrossEntropy, &mut rng).unwrap();
        let bytes = net.weights_bytes();
        assert_eq!(&bytes[..4], b"TPNW");
        assert_eq!(bytes.len(), 4 + 4 + 2 * 8 + net.parameter_count() * 4);
        let mut other = Network::init(&[4, 3, 2], Activation::Relu, Activation::SoftmaxCe, LossKind::CrossEntropy, &mut rng).unwrap();
        other.read_weights(bytes.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(other.weights_bytes(), bytes);
        assert_eq!(other.weights_digest(), net.weights_digest());

        let mut wrong = Network::init(&[4, 5, 2], Activation::Relu, Activation::SoftmaxCe, LossKind::CrossEntropy, &mut rng).unwrap();
        assert!(matches!(wrong.read_weights(bytes.as_slice(), Path::new("mem")), Err(Error::Format { .. })));
        assert!(other.read_weights(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }

    #[test]
    fn init_respects_glorot_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Network::init(&[30, 20], Activation::Relu, Activation::Identity, LossKind::Mse, &mut rng).unwrap();
        let limit = (6.0f32 / 50.0).sqrt();
        assert!(net.layers()[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }
}
