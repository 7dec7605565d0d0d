use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over `(T, H, W)`: `(B, C, T, H, W) -> (B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [b, c, t, h, w] = x.dims5()?;
    let v = t * h * w;
    let data = x
        .data()
        .chunks(v)
        .map(|s| s.iter().sum::<f64>() / v as f64)
        .collect();
    Tensor::from_vec(&[b, c], data)
}

pub fn global_avg_pool_backward(dy: &Tensor, input_shape: &[usize]) -> Tensor {
    let v: usize = input_shape[2..].iter().product();
    let mut dx = Tensor::zeros(input_shape);
    for (chunk, &g) in dx.data_mut().chunks_mut(v).zip(dy.data()) {
        chunk.fill(g / v as f64);
    }
    dx
}

/// Averages non-overlapping windows of `factor` frames.
pub fn temporal_avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [b, c, t, h, w] = x.dims5()?;
    if factor == 0 || t % factor != 0 {
        return Err(Error::Shape(format!(
            "cannot pool {t} frames by a factor of {factor}"
        )));
    }
    let to = t / factor;
    let hw = h * w;
    let mut y = Tensor::zeros(&[b, c, to, h, w]);
    for bc in 0..b * c {
        for ot in 0..to {
            let dst = &mut y.data_mut()[(bc * to + ot) * hw..(bc * to + ot + 1) * hw];
            for k in 0..factor {
                let it = ot * factor + k;
                let src = &x.data()[(bc * t + it) * hw..(bc * t + it + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s / factor as f64;
                }
            }
        }
    }
    Ok(y)
}

pub fn temporal_avg_pool_backward(dy: &Tensor, factor: usize) -> Tensor {
    let [b, c, to, h, w] = [dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3), dy.dim(4)];
    let t = to * factor;
    let hw = h * w;
    let mut dx = Tensor::zeros(&[b, c, t, h, w]);
    for bc in 0..b * c {
        for it in 0..t {
            let ot = it / factor;
            let src = &dy.data()[(bc * to + ot) * hw..(bc * to + ot + 1) * hw];
            let dst = &mut dx.data_mut()[(bc * t + it) * hw..(bc * t + it + 1) * hw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s / factor as f64;
            }
        }
    }
    dx
}
