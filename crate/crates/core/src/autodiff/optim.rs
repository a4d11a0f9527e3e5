//! Classical momentum SGD with weight decay and a linear learning-rate ramp.

use crate::error::{Error, Result};

use super::{EmbeddingNet, Real};

/// `g' = g + wd·θ`, `v ← μ·v + g'`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<T>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }

    pub fn step(&mut self, net: &mut EmbeddingNet<T>, grads: &[T], lr: f64) -> Result<()> {
        if grads.len() != net.param_count() {
            return Err(Error::InvalidInput(format!(
                "{} gradients for {} parameters",
                grads.len(),
                net.param_count()
            )));
        }
        if self.velocity.len() != grads.len() {
            self.velocity = vec![T::zero(); grads.len()];
        }
        let (mu, wd, lr) = (
            T::cast(self.momentum),
            T::cast(self.weight_decay),
            T::cast(lr),
        );
        let velocity = &mut self.velocity;
        net.update_params(|i, theta| {
            let g = grads[i] + wd * *theta;
            velocity[i] = mu * velocity[i] + g;
            *theta -= lr * velocity[i];
        });
        Ok(())
    }
}

/// One update of `net` in place with a fresh or continuing optimizer state.
pub fn sgd_step<T: Real>(
    net: &mut EmbeddingNet<T>,
    state: &mut SgdMomentum<T>,
    grads: &[T],
    lr: f64,
) -> Result<()> {
    state.step(net, grads, lr)
}

/// Learning rate moving linearly from `start` at iteration 0 to `end` at
/// iteration `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub start: f64,
    pub end: f64,
    pub total: u64,
}

impl LinearDecay {
    pub fn at(&self, iteration: u64) -> f64 {
        if self.total == 0 {
            return self.start;
        }
        let t = iteration.min(self.total) as f64 / self.total as f64;
        self.start + (self.end - self.start) * t
    }
}
