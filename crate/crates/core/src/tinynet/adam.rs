use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Adam { config, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.num_params())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step on `params`.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape { expected: self.m.len(), got: grads.len().min(params.len()) });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        self.update_range(0, params, grads, c1, c2);
        Ok(())
    }

    /// One descent step on every parameter of `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() || net.num_params() != self.m.len() {
            return Err(Error::Shape { expected: self.m.len(), got: net.num_params() });
        }
        if !grads.is_finite() {
            return Err(Error::Training("non-finite gradient".into()));
        }
        self.step += 1;
        let (c1, c2) = self.corrections();
        let mut offset = 0;
        for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
            if layer.weights.dim() != g.weights.dim() || layer.bias.len() != g.bias.len() {
                return Err(Error::Shape { expected: layer.weights.len(), got: g.weights.len() });
            }
            let w = layer.weights.as_slice_mut().expect("standard layout");
            let gw = g.weights.as_standard_layout();
            offset = self.update_range(offset, w, gw.as_slice().expect("standard layout"), c1, c2);
            let b = layer.bias.as_slice_mut().expect("contiguous");
            let gb = g.bias.as_standard_layout();
            offset = self.update_range(offset, b, gb.as_slice().expect("contiguous"), c1, c2);
        }
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }

    fn update_range(&mut self, offset: usize, params: &mut [f64], grads: &[f64], c1: f64, c2: f64) -> usize {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset + params.len()
    }
}
