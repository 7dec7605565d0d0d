use alloc::format;
use alloc::vec::Vec;

use super::param::{join_path, Module, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const RUNNING_MOMENTUM: f64 = 0.1;

/// Batch normalisation over `(B, C, T, H, W)`.
///
/// Training statistics are taken per channel over `(B, T, H, W)`. Inference
/// uses running estimates of those statistics, so at inference time every
/// sample and every frame is transformed independently by a per-channel
/// affine map.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// What [`BatchNorm::backward`] needs from a training forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    /// Unbiased batch variance, folded into the running estimate.
    var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor) -> Result<[usize; 5]> {
        let shape = x.dims5()?;
        if shape[1] != self.channels() {
            return Err(Error::Shape(format!(
                "norm expects {} channels, got {}",
                self.channels(),
                shape[1]
            )));
        }
        Ok(shape)
    }

    /// Normalises with the statistics of this batch.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, NormCache)> {
        let [b, c, t, h, w] = self.check(x)?;
        let vol = t * h * w;
        let n = (b * vol) as f64;
        let xd = x.data();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut cache = NormCache {
            xhat: Tensor::zeros(&[0]),
            inv_std: Vec::with_capacity(c),
            mean: Vec::with_capacity(c),
            var: Vec::with_capacity(c),
        };
        for ci in 0..c {
            let slabs = (0..b).map(|s| (s * c + ci) * vol);
            let mean = slabs.clone().map(|o| xd[o..o + vol].iter().sum::<f64>()).sum::<f64>() / n;
            let ss: f64 = slabs
                .clone()
                .map(|o| xd[o..o + vol].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                .sum();
            let is = 1.0 / libm::sqrt(ss / n + EPS);
            for o in slabs {
                for i in o..o + vol {
                    let xh = (xd[i] - mean) * is;
                    xhat.data_mut()[i] = xh;
                    y.data_mut()[i] = gamma[ci] * xh + beta[ci];
                }
            }
            cache.inv_std.push(is);
            cache.mean.push(mean);
            cache.var.push(if n > 1.0 { ss / (n - 1.0) } else { 0.0 });
        }
        cache.xhat = xhat;
        Ok((y, cache))
    }

    /// Normalises with the running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c, t, h, w] = self.check(x)?;
        let vol = t * h * w;
        let mut y = x.clone();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let (rm, rv) = (self.running_mean.data(), self.running_var.data());
        for s in 0..b {
            for ci in 0..c {
                let scale = gamma[ci] / libm::sqrt(rv[ci] + EPS);
                let shift = beta[ci] - rm[ci] * scale;
                let o = (s * c + ci) * vol;
                y.data_mut()[o..o + vol].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    /// Accumulates `gamma`/`beta` gradients, folds the batch statistics of
    /// `cache` into the running estimates and returns the input gradient.
    pub fn backward(&mut self, cache: &NormCache, dy: &Tensor) -> Result<Tensor> {
        let [b, c, t, h, w] = self.check(dy)?;
        let vol = t * h * w;
        let n = (b * vol) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        let gamma = self.gamma.value.data().to_vec();
        let dg = self.gamma.grad.data_mut();
        let db = self.beta.grad.data_mut();
        let xh = cache.xhat.data();
        let dyd = dy.data();
        for ci in 0..c {
            let slabs = (0..b).map(|s| (s * c + ci) * vol);
            let (mut sum_dxh, mut sum_dxh_xh) = (0.0, 0.0);
            for o in slabs.clone() {
                for i in o..o + vol {
                    dg[ci] += dyd[i] * xh[i];
                    db[ci] += dyd[i];
                    let dxh = dyd[i] * gamma[ci];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[i];
                }
            }
            let is = cache.inv_std[ci];
            for o in slabs {
                for i in o..o + vol {
                    let dxh = dyd[i] * gamma[ci];
                    dx.data_mut()[i] = is / n * (n * dxh - sum_dxh - xh[i] * sum_dxh_xh);
                }
            }
        }
        let m = RUNNING_MOMENTUM;
        for ci in 0..c {
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = (1.0 - m) * *rm + m * cache.mean[ci];
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = (1.0 - m) * *rv + m * cache.var[ci];
        }
        Ok(dx)
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join_path(prefix, "gamma"), &self.gamma);
        f(&join_path(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "gamma"), &mut self.gamma);
        f(&join_path(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join_path(prefix, "running_mean"), &self.running_mean);
        f(&join_path(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join_path(prefix, "running_mean"), &mut self.running_mean);
        f(&join_path(prefix, "running_var"), &mut self.running_var);
    }
}
