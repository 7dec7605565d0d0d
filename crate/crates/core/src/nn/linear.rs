use alloc::format;

use rand::Rng;

use super::param::{join_path, Module, Param};
use crate::error::{Error, Result};
use crate::gemm::{gemm, Layout};
use crate::rng::normal;
use crate::tensor::Tensor;

/// Affine map `(B, D) -> (B, O)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Weights drawn from `N(0, 1/D)`, zero bias.
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = libm::sqrt(1.0 / input.max(1) as f64);
        let mut w = Tensor::zeros(&[output, input]);
        w.data_mut().iter_mut().for_each(|v| *v = std * normal(rng));
        Self {
            weight: Param::new(w),
            bias: Param::new(Tensor::zeros(&[output])),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.dim(1) != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear expects (B, {}), got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let (b, d, o) = (x.dim(0), self.input_dim(), self.output_dim());
        let mut y = Tensor::zeros(&[b, o]);
        for row in y.data_mut().chunks_mut(o.max(1)).take(if o == 0 { 0 } else { b }) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(
            1.0,
            x.data(),
            Layout::row_major(b, d),
            self.weight.value.data(),
            Layout::row_major(o, d).transposed(),
            1.0,
            y.data_mut(),
            Layout::row_major(b, o),
        );
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (b, d, o) = (x.dim(0), self.input_dim(), self.output_dim());
        gemm(
            1.0,
            dy.data(),
            Layout::row_major(b, o).transposed(),
            x.data(),
            Layout::row_major(b, d),
            1.0,
            self.weight.grad.data_mut(),
            Layout::row_major(o, d),
        );
        for row in dy.data().chunks(o.max(1)).take(if o == 0 { 0 } else { b }) {
            for (g, v) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = Tensor::zeros(&[b, d]);
        gemm(
            1.0,
            dy.data(),
            Layout::row_major(b, o),
            self.weight.value.data(),
            Layout::row_major(o, d),
            0.0,
            dx.data_mut(),
            Layout::row_major(b, d),
        );
        dx
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join_path(prefix, "weight"), &self.weight);
        f(&join_path(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        f(&join_path(prefix, "bias"), &mut self.bias);
    }
}
