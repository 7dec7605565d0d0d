//! SGD with momentum and a step learning-rate schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{Module, Param};
use crate::tensor::Tensor;

/// Heavy-ball SGD with L2 weight decay folded into the gradient:
/// `v <- mu v + (g + wd w)`, `w <- w - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Updates every parameter of `model` from its accumulated gradient.
    pub fn step(&mut self, model: &mut dyn Module, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        let mut i = 0;
        model.visit_mut("", &mut |_, p: &mut Param| {
            if velocity.len() == i {
                velocity.push(Tensor::zeros(p.value.shape()));
            }
            let v = velocity[i].data_mut();
            let w = p.value.data_mut();
            for ((v, w), g) in v.iter_mut().zip(w.iter_mut()).zip(p.grad.data()) {
                *v = mu * *v + g + wd * *w;
                *w -= lr * *v;
            }
            i += 1;
        });
    }
}

/// Multiplies the base rate by `factor` at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl StepSchedule {
    /// Decay by 0.1 at 50% and 75% of `epochs`.
    pub fn conventional(epochs: usize) -> Self {
        Self {
            milestones: alloc::vec![epochs / 2, epochs * 3 / 4],
            factor: 0.1,
        }
    }

    /// Rate for the zero-based `epoch`.
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        let n = self.milestones.iter().filter(|&&m| m > 0 && epoch >= m).count();
        base * libm::pow(self.factor, n as f64)
    }
}
