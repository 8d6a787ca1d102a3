//! Adam, applied uniformly to every parameter tensor of a [`StackedNet`].
//!
//! Per coordinate, at step `t`:
//!
//! ```text
//! m = beta1 * m + (1 - beta1) * g
//! v = beta2 * v + (1 - beta2) * g^2
//! m_hat = m / (1 - beta1^t)
//! v_hat = v / (1 - beta2^t)
//! theta -= alpha * m_hat / sqrt(v_hat + eps)
//! ```
//!
//! Note `eps` sits inside the square root.

use crate::error::{Error, Result};
use crate::nn::{GradientSet, StackedNet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.alpha)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Moment buffers for one parameter set, stored flat per tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Fresh state sized from tensor lengths.
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        })
    }

    pub fn for_net(config: AdamConfig, net: &StackedNet) -> Result<Self> {
        let lens: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &lens)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update over raw tensors. Validates every shape and every gradient
    /// before touching any buffer.
    pub fn step_tensors(&mut self, names: &[String], params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} tensors in state", self.m.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                let name = names.get(k).cloned().unwrap_or_else(|| format!("#{k}"));
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: state len {}", self.m[k].len()),
                    format!("param len {} grad len {}", p.len(), g.len()),
                ));
            }
        }
        if let Some(k) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                tensor: names.get(k).cloned().unwrap_or_else(|| format!("#{k}")),
            });
        }

        self.t += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for k in 0..params.len() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for ((theta, &g), (mi, vi)) in params[k].iter_mut().zip(grads[k]).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= alpha * m_hat / (v_hat + epsilon).sqrt();
            }
        }
        Ok(())
    }

    /// Updates `net` in place from `grads`.
    pub fn step(&mut self, net: &mut StackedNet, grads: &GradientSet) -> Result<()> {
        let names = net.tensor_names();
        if grads.tensors().len() != names.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter tensors", names.len()),
                format!("{} gradient tensors", grads.tensors().len()),
            ));
        }
        let g = grads.tensors();
        let mut p = net.tensors_mut();
        self.step_tensors(&names, &mut p, &g)
    }
}

/// Functional form: returns the updated network, leaving the input intact.
pub fn adam_step(state: &mut AdamState, params: &StackedNet, grads: &GradientSet) -> Result<StackedNet> {
    let mut next = params.clone();
    state.step(&mut next, grads)?;
    Ok(next)
}
