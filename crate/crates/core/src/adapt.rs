//! Adaptive error-propagation rate controller.
//!
//! Per layer and per sample: the layer's total local error `Y` is normalized
//! by the largest `Y` seen so far in the run, mapped linearly onto
//! `[s_min, s_max]`, damped by `zeta^(L - l)` and turned into a top-k count.
//! Layers are numbered `1..=L` with `L` the output layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TinyPropConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub zeta: f64,
}

impl TinyPropConfig {
    /// Recommended setting for training from scratch.
    pub const SCRATCH: TinyPropConfig = TinyPropConfig {
        s_min: 0.1,
        s_max: 0.8,
        zeta: 0.9,
    };

    /// Recommended setting for fine-tuning a pretrained network.
    pub const FINE_TUNE: TinyPropConfig = TinyPropConfig {
        s_min: 0.1,
        s_max: 0.4,
        zeta: 0.9,
    };

    pub fn new(s_min: f64, s_max: f64, zeta: f64) -> Result<Self> {
        let cfg = TinyPropConfig { s_min, s_max, zeta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let TinyPropConfig { s_min, s_max, zeta } = *self;
        if !(0.0..=1.0).contains(&s_min) || !(0.0..=1.0).contains(&s_max) || s_min > s_max {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= s_min <= s_max <= 1, got s_min = {s_min}, s_max = {s_max}"
            )));
        }
        if !(zeta > 0.0 && zeta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "zeta must be in (0, 1], got {zeta}"
            )));
        }
        Ok(())
    }
}

/// `Y = Σ |δ_a,i|`, accumulated in f64.
pub fn layer_error_sum(delta_a: &[f32]) -> f64 {
    delta_a.iter().map(|v| v.abs() as f64).sum()
}

/// `S = Ŝ · zeta^(layers - layer)`; the output layer is left undamped.
pub fn damp(s_hat: f64, layer: usize, layers: usize, zeta: f64) -> f64 {
    debug_assert!(1 <= layer && layer <= layers);
    s_hat * zeta.powi((layers - layer) as i32)
}

/// `k = clamp(floor(S · N), 1, N)`.
pub fn rate_to_k(rate: f64, neurons: usize) -> usize {
    // absorbs representation error such as 0.29999999999999999 * 10
    let k = (rate * neurons as f64 + 1e-9).floor();
    (k.max(1.0) as usize).min(neurons)
}

/// Running per-layer maxima of `Y` plus the controller settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyPropState {
    config: TinyPropConfig,
    y_max: Vec<Option<f64>>,
}

impl TinyPropState {
    pub fn new(config: TinyPropConfig, layers: usize) -> Result<Self> {
        config.validate()?;
        if layers == 0 {
            return Err(Error::InvalidArgument("controller needs at least one layer".into()));
        }
        Ok(TinyPropState {
            config,
            y_max: vec![None; layers],
        })
    }

    pub fn config(&self) -> &TinyPropConfig {
        &self.config
    }

    pub fn layers(&self) -> usize {
        self.y_max.len()
    }

    /// Running maximum for `layer` (1-based), `None` before its first observation.
    pub fn y_max(&self, layer: usize) -> Option<f64> {
        self.y_max.get(layer.wrapping_sub(1)).copied().flatten()
    }

    /// Raises the layer's running maximum to `y` if needed, then interpolates
    /// `Ŝ` between `s_min` and `s_max` by `y / y_max`.
    pub fn update_and_rate(&mut self, layer: usize, y: f64) -> Result<f64> {
        let layers = self.y_max.len();
        let slot = layer
            .checked_sub(1)
            .and_then(|i| self.y_max.get_mut(i))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("layer {layer} outside 1..={layers}"))
            })?;
        let y = y.max(0.0);
        let max = match *slot {
            Some(m) if m >= y => m,
            _ => y,
        };
        *slot = Some(max);

        let TinyPropConfig { s_min, s_max, .. } = self.config;
        if max == 0.0 {
            return Ok(s_min);
        }
        let t = y / max;
        // exact at both ends: t = 0 gives s_min, t = 1 gives s_max
        Ok((s_min * (1.0 - t) + s_max * t).clamp(s_min, s_max))
    }

    /// Full controller step for one layer: returns `(S, k)`.
    pub fn step(&mut self, layer: usize, delta_a: &[f32]) -> Result<(f64, usize)> {
        let s_hat = self.update_and_rate(layer, layer_error_sum(delta_a))?;
        let s = damp(s_hat, layer, self.layers(), self.config.zeta);
        Ok((s, rate_to_k(s, delta_a.len())))
    }
}
