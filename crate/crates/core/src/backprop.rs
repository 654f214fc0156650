//! Backward-pass engines.
//!
//! All three engines run the same per-layer skeleton, output layer first:
//!
//! 1. pick `k` for the layer's local error `δ_a` (engine specific),
//! 2. keep the top-k entries of `δ_a` and form `δ̂_z = δ̂_a ⊙ f'(z)`,
//! 3. weight-gradient rows `δ̂_z[i] · (a^{l-1})ᵀ` and bias entries for the
//!    selected neurons only,
//! 4. propagate the dense `δ_a^{l-1} = Wᵀ · δ̂_z` through the selected rows.
//!
//! With `k = N` at every layer the skeleton is ordinary dense backprop, bit
//! for bit, because the masked kernels accumulate in the same order as the
//! dense ones.

use serde::{Deserialize, Serialize};

use crate::adapt::{rate_to_k, TinyPropConfig, TinyPropState};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{matvec_transposed_masked, outer_masked, top_k, IndexSet, Matrix, RowSparse};

/// Gradient of one layer, materialized only on its selected neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    /// Selected rows of `δ_W`; rows outside the selection are zero.
    pub weights: RowSparse,
    /// `δ_b` on the same selection, one entry per selected neuron.
    pub bias: Vec<f32>,
    /// `δ_a^{l-1}` handed to the layer below (dense).
    pub propagated: Vec<f32>,
    /// Multiply-accumulates spent on this layer's backward pass.
    pub macs: u64,
}

impl LayerGradient {
    pub fn selection(&self) -> &IndexSet {
        &self.weights.selection
    }

    pub fn dense_weights(&self) -> Matrix {
        self.weights.to_dense()
    }

    pub fn dense_bias(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.weights.selection.bound()];
        for (&i, &g) in self.weights.selection.indices().iter().zip(&self.bias) {
            out[i] = g;
        }
        out
    }
}

/// Per-layer gradients, index 0 being the first hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }
}

/// Analytic dense backward cost: `Σ_l 2 · N^l · N^{l-1}`.
pub fn dense_backward_macs(net: &Network) -> u64 {
    net.dims().iter().map(|&(n, m)| 2 * (n * m) as u64).sum()
}

/// Realized selection size and rate for one layer in one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStep {
    pub k: usize,
    /// Fraction `k / N` for fixed engines, the damped controller rate for the adaptive one.
    pub rate: f64,
}

/// Shared skeleton. `choose` receives the 1-based layer index and the
/// layer's local error and returns `(k, rate)`.
fn backward_with<F>(net: &Network, y: &[f32], mut choose: F) -> Result<(GradientSet, Vec<LayerStep>)>
where
    F: FnMut(usize, &[f32]) -> Result<(usize, f64)>,
{
    let depth = net.depth();
    let out = net.output_gradient(y)?;
    let mut delta_a = out.delta;
    let mut grads: Vec<Option<LayerGradient>> = vec![None; depth];
    let mut steps = vec![LayerStep { k: 0, rate: 0.0 }; depth];

    for (idx, layer) in net.layers().iter().enumerate().rev() {
        let fused = idx == depth - 1 && out.fused;
        let n = layer.width();
        let (k, rate) = choose(idx + 1, &delta_a)?;
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "k = {k} for layer {} with {n} neurons",
                idx + 1
            )));
        }
        let sel = top_k(&delta_a, k)?;

        let z = layer.preactivation()?;
        let mut delta_z = vec![0.0f32; n];
        for &i in sel.indices() {
            delta_z[i] = if fused {
                delta_a[i]
            } else {
                delta_a[i] * layer.activation.derivative(z[i])
            };
        }

        let mut macs = 0;
        let weights = outer_masked(&delta_z, layer.input()?, &sel, &mut macs)?;
        let bias = sel.indices().iter().map(|&i| delta_z[i]).collect();
        let propagated = matvec_transposed_masked(&layer.weights, &delta_z, &sel, &mut macs)?;

        delta_a = propagated.clone();
        steps[idx] = LayerStep { k, rate };
        grads[idx] = Some(LayerGradient {
            weights,
            bias,
            propagated,
            macs,
        });
    }

    let layers = grads.into_iter().map(|g| g.expect("every layer visited")).collect();
    Ok((GradientSet { layers }, steps))
}

/// Dense backward pass.
pub fn backward_full(net: &Network, y: &[f32]) -> Result<GradientSet> {
    let widths: Vec<usize> = net.dims().iter().map(|d| d.0).collect();
    Ok(backward_with(net, y, |l, _| Ok((widths[l - 1], 1.0)))?.0)
}

/// Top-k backward pass with a fixed `k` per layer (`k_per_layer[0]` is the first layer).
pub fn backward_sparse(net: &Network, y: &[f32], k_per_layer: &[usize]) -> Result<GradientSet> {
    if k_per_layer.len() != net.depth() {
        return Err(Error::InvalidArgument(format!(
            "{} k values for {} layers",
            k_per_layer.len(),
            net.depth()
        )));
    }
    let widths: Vec<usize> = net.dims().iter().map(|d| d.0).collect();
    Ok(backward_with(net, y, |l, _| {
        let k = k_per_layer[l - 1];
        Ok((k, k as f64 / widths[l - 1] as f64))
    })?
    .0)
}

/// Adaptive backward pass; updates the controller's running maxima.
pub fn backward_tinyprop(
    net: &Network,
    y: &[f32],
    state: &mut TinyPropState,
) -> Result<(GradientSet, Vec<LayerStep>)> {
    if state.layers() != net.depth() {
        return Err(Error::InvalidArgument(format!(
            "controller tracks {} layers, network has {}",
            state.layers(),
            net.depth()
        )));
    }
    backward_with(net, y, |l, delta_a| {
        let (s, k) = state.step(l, delta_a)?;
        Ok((k, s))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineKind {
    Full,
    FixedTopK { ratio: f64 },
    TinyProp(TinyPropConfig),
}

impl EngineKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            EngineKind::Full => Ok(()),
            EngineKind::FixedTopK { ratio } => {
                if *ratio > 0.0 && *ratio <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "top-k ratio must be in (0, 1], got {ratio}"
                    )))
                }
            }
            EngineKind::TinyProp(cfg) => cfg.validate(),
        }
    }

    /// Short label used in reports, e.g. `full`, `topk:0.33`, `tinyprop(0.1,0.8,0.9)`.
    pub fn label(&self) -> String {
        match self {
            EngineKind::Full => "full".into(),
            EngineKind::FixedTopK { ratio } => format!("topk:{ratio}"),
            EngineKind::TinyProp(c) => format!("tinyprop({},{},{})", c.s_min, c.s_max, c.zeta),
        }
    }
}

/// An engine with whatever state it carries across steps.
#[derive(Debug, Clone)]
pub enum Engine {
    Full,
    FixedTopK { ratio: f64, k: Vec<usize> },
    TinyProp(TinyPropState),
}

impl Engine {
    pub fn new(kind: &EngineKind, net: &Network) -> Result<Self> {
        kind.validate()?;
        Ok(match *kind {
            EngineKind::Full => Engine::Full,
            EngineKind::FixedTopK { ratio } => Engine::FixedTopK {
                ratio,
                k: net.dims().iter().map(|&(n, _)| rate_to_k(ratio, n)).collect(),
            },
            EngineKind::TinyProp(cfg) => Engine::TinyProp(TinyPropState::new(cfg, net.depth())?),
        })
    }

    /// One backward pass over the network's cached forward values.
    pub fn backward(&mut self, net: &Network, y: &[f32]) -> Result<(GradientSet, Vec<LayerStep>)> {
        match self {
            Engine::Full => {
                let widths: Vec<usize> = net.dims().iter().map(|d| d.0).collect();
                backward_with(net, y, |l, _| Ok((widths[l - 1], 1.0)))
            }
            Engine::FixedTopK { k, .. } => {
                let widths: Vec<usize> = net.dims().iter().map(|d| d.0).collect();
                let k = k.clone();
                backward_with(net, y, |l, _| {
                    Ok((k[l - 1], k[l - 1] as f64 / widths[l - 1] as f64))
                })
            }
            Engine::TinyProp(state) => backward_tinyprop(net, y, state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer, LossKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, widths: &[usize], loss: LossKind) -> Network {
        let out = match loss {
            LossKind::CrossEntropy => Activation::SoftmaxCe,
            LossKind::Mse => Activation::Sigmoid,
        };
        Network::init(widths, Activation::Relu, out, loss, rng).unwrap()
    }

    fn one_hot(n: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn single_linear_layer_matches_hand_derivation() {
        let w = Matrix::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]).unwrap();
        let b = vec![0.1, -0.2];
        let layer = Layer::new(w.clone(), b.clone(), Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![layer], LossKind::Mse).unwrap();
        let x = [1.5, -2.0];
        let y = [0.3, 0.7];
        net.forward(&x).unwrap();
        let g = backward_full(&net, &y).unwrap();
        // (2/N)(Wx + b - y) · xᵀ
        let p = [0.5 * 1.5 + 2.0 + 0.1, 3.0 - 0.5 - 0.2];
        let d: Vec<f32> = p.iter().zip(&y).map(|(p, t)| p - t).collect();
        let dw = g.layers[0].dense_weights();
        for i in 0..2 {
            for j in 0..2 {
                assert!((dw.get(i, j) - d[i] * x[j]).abs() < 1e-6);
            }
            assert!((g.layers[0].dense_bias()[i] - d[i]).abs() < 1e-6);
        }
        assert_eq!(g.macs(), 8);
    }

    #[test]
    fn zero_output_error_gives_zero_gradients() {
        let l = Layer::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
        let mut net = Network::from_layers(vec![l], LossKind::Mse).unwrap();
        net.forward(&[0.2, 0.4]).unwrap();
        let g = backward_full(&net, &[0.2, 0.4]).unwrap();
        assert!(g.layers[0].dense_weights().as_slice().iter().all(|&v| v == 0.0));
        assert!(g.layers[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_forward_is_a_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = random_net(&mut rng, &[3, 4, 2], LossKind::CrossEntropy);
        assert!(matches!(backward_full(&net, &[1.0, 0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn full_selection_equals_full_engine_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in [LossKind::CrossEntropy, LossKind::Mse] {
            let mut net = random_net(&mut rng, &[6, 8, 5, 3], loss);
            let x: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            net.forward(&x).unwrap();
            let y = one_hot(3, 1);
            let full = backward_full(&net, &y).unwrap();
            let sparse = backward_sparse(&net, &y, &[8, 5, 3]).unwrap();
            assert_eq!(full, sparse);
            assert_eq!(full.macs(), dense_backward_macs(&net));
        }
    }

    #[test]
    fn k_one_leaves_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = random_net(&mut rng, &[4, 6, 3], LossKind::CrossEntropy);
        net.forward(&[0.1, 0.9, -0.3, 0.5]).unwrap();
        let g = backward_sparse(&net, &one_hot(3, 2), &[1, 2]).unwrap();
        let dense = g.layers[0].dense_weights();
        let nonzero_rows = (0..6).filter(|&i| dense.row(i).iter().any(|&v| v != 0.0)).count();
        assert!(nonzero_rows <= 1);
        assert_eq!(g.layers[0].selection().len(), 1);
        assert_eq!(g.macs(), 2 * (4 + 2 * 6) as u64);
    }

    #[test]
    fn invalid_k_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = random_net(&mut rng, &[2, 3, 2], LossKind::CrossEntropy);
        net.forward(&[0.5, 0.5]).unwrap();
        assert!(backward_sparse(&net, &[1.0, 0.0], &[0, 2]).is_err());
        assert!(backward_sparse(&net, &[1.0, 0.0], &[4, 2]).is_err());
        assert!(backward_sparse(&net, &[1.0, 0.0], &[1]).is_err());
    }

    #[test]
    fn disabled_adaptivity_equals_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = random_net(&mut rng, &[5, 7, 4, 3], LossKind::CrossEntropy);
        let mut state = TinyPropState::new(TinyPropConfig::new(1.0, 1.0, 1.0).unwrap(), 3).unwrap();
        for _ in 0..5 {
            let x: Vec<f32> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            net.forward(&x).unwrap();
            let y = one_hot(3, rng.gen_range(0..3));
            let (g, steps) = backward_tinyprop(&net, &y, &mut state).unwrap();
            assert_eq!(g, backward_full(&net, &y).unwrap());
            assert!(steps.iter().zip(net.dims()).all(|(s, (n, _))| s.k == n));
        }
    }

    #[test]
    fn first_step_runs_at_damped_s_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = random_net(&mut rng, &[8, 40, 40, 20], LossKind::CrossEntropy);
        net.forward(&[0.3; 8]).unwrap();
        let cfg = TinyPropConfig::new(0.1, 0.8, 0.5).unwrap();
        let mut state = TinyPropState::new(cfg, 3).unwrap();
        let (_, steps) = backward_tinyprop(&net, &one_hot(20, 4), &mut state).unwrap();
        // output layer undamped, then halved, then quartered
        assert_eq!(steps[2].rate, 0.8);
        assert_eq!(steps[1].rate, 0.4);
        assert_eq!(steps[0].rate, 0.2);
        assert_eq!(steps.iter().map(|s| s.k).collect::<Vec<_>>(), vec![8, 16, 16]);
    }

    #[test]
    fn tinyprop_k_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = random_net(&mut rng, &[6, 10, 8, 4], LossKind::Mse);
        let mut state = TinyPropState::new(TinyPropConfig::FINE_TUNE, 3).unwrap();
        for _ in 0..50 {
            let x: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            net.forward(&x).unwrap();
            let y: Vec<f32> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (g, steps) = backward_tinyprop(&net, &y, &mut state).unwrap();
            for ((s, (n, m)), lg) in steps.iter().zip(net.dims()).zip(&g.layers) {
                assert!(s.k >= 1 && s.k <= n);
                assert_eq!(lg.macs, 2 * (s.k * m) as u64);
            }
        }
    }

    #[test]
    fn engine_kinds_validate_and_label() {
        assert!(EngineKind::FixedTopK { ratio: 0.0 }.validate().is_err());
        assert!(EngineKind::FixedTopK { ratio: 1.2 }.validate().is_err());
        assert_eq!(EngineKind::FixedTopK { ratio: 0.33 }.label(), "topk:0.33");
        assert_eq!(
            EngineKind::TinyProp(TinyPropConfig::SCRATCH).label(),
            "tinyprop(0.1,0.8,0.9)"
        );
    }
}
