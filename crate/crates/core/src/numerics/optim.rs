//! Classic (heavy-ball) SGD with momentum.
//!
//! `v ← momentum·v − lr·scale·g`, then `p ← p + v`. Each parameter tensor has
//! its own learning-rate multiplier so a single tensor, such as a freshly added
//! classifier column, can be trained faster than the rest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
    learning_rate: f64,
    momentum: f64,
    lr_scale: Vec<f64>,
}

impl OptimizerState {
    /// Zero velocity for tensors of the given lengths, all scales 1.0.
    pub fn new(shapes: &[usize], learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            learning_rate,
            momentum,
            lr_scale: vec![1.0; shapes.len()],
        })
    }

    pub fn set_lr_scale(&mut self, tensor: usize, scale: f64) -> Result<()> {
        if !(scale > 0.0) {
            return Err(Error::Config(format!("lr scale must be positive, got {scale}")));
        }
        let slot = self.lr_scale.get_mut(tensor).ok_or_else(|| {
            Error::InvalidInput(format!("no parameter tensor with index {tensor}"))
        })?;
        *slot = scale;
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn lr_scale(&self) -> &[f64] {
        &self.lr_scale
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before rescaling.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|v| *v *= s);
    }
    norm
}

/// Applies one momentum step in place to every parameter tensor.
pub fn sgd_momentum_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape {
            op: "sgd_momentum_step",
            left: (params.len(), 0),
            right: (grads.len(), state.velocity.len()),
        });
    }
    for (t, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.velocity[t].len() {
            return Err(Error::Shape {
                op: "sgd_momentum_step",
                left: (t, p.len()),
                right: (g.len(), state.velocity[t].len()),
            });
        }
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let step = lr * state.lr_scale[t];
        for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(state.velocity[t].iter_mut()) {
            *vi = mu * *vi - step * gi;
            *pi += *vi;
        }
    }
    Ok(())
}
