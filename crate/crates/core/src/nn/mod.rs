//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Tensors are laid out `(B, C, T, H, W)`. A "2D" layer is a 3D layer with
//! temporal kernel 1, which makes it act on each frame independently with
//! shared weights.

mod conv;
mod linear;
mod norm;
mod param;
mod pool;

pub use conv::Conv3d;
pub use linear::Linear;
pub use norm::{BatchNorm, NormCache, RUNNING_MOMENTUM};
pub use param::{join_path, Module, Param};
pub(crate) use conv::conv_output_dims;
pub use pool::{global_avg_pool, global_avg_pool_backward, temporal_avg_pool, temporal_avg_pool_backward};

use crate::tensor::Tensor;

pub fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward_in_place(dy: &mut Tensor, y: &Tensor) {
    for (d, &o) in dy.data_mut().iter_mut().zip(y.data()) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}
