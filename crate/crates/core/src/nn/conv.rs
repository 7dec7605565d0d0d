use alloc::format;
use alloc::vec;

use rand::Rng;

use super::param::{join_path, Module, Param};
use crate::error::{Error, Result};
use crate::gemm::{gemm, Layout};
use crate::rng::normal;
use crate::tensor::Tensor;

/// Upper bound on the im2col buffer, in elements.
const COL_BUDGET: usize = 1 << 22;

/// Convolution over `(B, C, T, H, W)` with kernel `(kt, kh, kw)`.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    input: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// Output frames processed per im2col chunk.
    fn frames_per_chunk(&self) -> usize {
        let per_frame = self.k() * self.output[1] * self.output[2];
        (COL_BUDGET / per_frame.max(1)).clamp(1, self.output[0].max(1))
    }
}

impl Conv3d {
    /// Fan-in scaled (He) normal initialisation; bias, when present, starts at zero.
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let std = libm::sqrt(2.0 / fan_in as f64);
        let mut w = Tensor::zeros(&[cout, cin, kernel[0], kernel[1], kernel[2]]);
        w.data_mut().iter_mut().for_each(|v| *v = std * normal(rng));
        Self {
            weight: Param::new(w),
            bias: bias.then(|| Param::new(Tensor::zeros(&[cout]))),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.value.shape();
        [s[2], s[3], s[4]]
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        conv_output_dims(input, self.kernel(), self.stride, self.padding)
    }

    fn geometry(&self, x: &Tensor) -> Result<(usize, Geometry)> {
        let [b, c, t, h, w] = x.dims5()?;
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                c
            )));
        }
        let kernel = self.kernel();
        for i in 0..3 {
            if [t, h, w][i] + 2 * self.padding[i] < kernel[i] {
                return Err(Error::Shape(format!(
                    "input {:?} smaller than kernel {:?}",
                    [t, h, w],
                    kernel
                )));
            }
        }
        Ok((
            b,
            Geometry {
                cin: c,
                cout: self.out_channels(),
                kernel,
                stride: self.stride,
                padding: self.padding,
                input: [t, h, w],
                output: self.output_dims([t, h, w]),
            },
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, g) = self.geometry(x)?;
        let [to, ho, wo] = g.output;
        let mut y = Tensor::zeros(&[batch, g.cout, to, ho, wo]);
        let (k, vin, vout) = (g.k(), g.in_volume(), g.out_volume());
        let w = self.weight.value.data();
        let fpc = g.frames_per_chunk();
        let mut col = vec![0.0; if g.is_pointwise() { 0 } else { k * fpc * ho * wo }];
        for b in 0..batch {
            let xb = &x.data()[b * g.cin * vin..(b + 1) * g.cin * vin];
            let yb = &mut y.data_mut()[b * g.cout * vout..(b + 1) * g.cout * vout];
            if g.is_pointwise() {
                gemm(
                    1.0,
                    w,
                    Layout::row_major(g.cout, k),
                    xb,
                    Layout::row_major(k, vin),
                    0.0,
                    yb,
                    Layout::row_major(g.cout, vout),
                );
                continue;
            }
            let mut t0 = 0;
            while t0 < to {
                let nt = fpc.min(to - t0);
                let n = nt * ho * wo;
                let col = &mut col[..k * n];
                im2col(xb, &g, t0, nt, col);
                let p0 = t0 * ho * wo;
                gemm(
                    1.0,
                    w,
                    Layout::row_major(g.cout, k),
                    col,
                    Layout::row_major(k, n),
                    0.0,
                    &mut yb[p0..],
                    Layout {
                        rows: g.cout,
                        cols: n,
                        row_stride: vout,
                        col_stride: 1,
                    },
                );
                t0 += nt;
            }
        }
        if let Some(bias) = &self.bias {
            let yd = y.data_mut();
            for b in 0..batch {
                for (co, &bv) in bias.value.data().iter().enumerate() {
                    let base = (b * g.cout + co) * vout;
                    yd[base..base + vout].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (batch, g) = self.geometry(x)?;
        let [to, ho, wo] = g.output;
        if dy.shape() != [batch, g.cout, to, ho, wo] {
            return Err(Error::Shape(format!(
                "conv output gradient has shape {:?}",
                dy.shape()
            )));
        }
        let (k, vin, vout) = (g.k(), g.in_volume(), g.out_volume());
        let mut dx = Tensor::zeros(x.shape());
        if let Some(bias) = &mut self.bias {
            let gb = bias.grad.data_mut();
            for b in 0..batch {
                for (co, gv) in gb.iter_mut().enumerate() {
                    let base = (b * g.cout + co) * vout;
                    *gv += dy.data()[base..base + vout].iter().sum::<f64>();
                }
            }
        }
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let fpc = g.frames_per_chunk();
        let buf_len = if g.is_pointwise() { 0 } else { k * fpc * ho * wo };
        let mut col = vec![0.0; buf_len];
        let mut dcol = vec![0.0; buf_len];
        for b in 0..batch {
            let xb = &x.data()[b * g.cin * vin..(b + 1) * g.cin * vin];
            let dyb = &dy.data()[b * g.cout * vout..(b + 1) * g.cout * vout];
            let dxb = &mut dx.data_mut()[b * g.cin * vin..(b + 1) * g.cin * vin];
            if g.is_pointwise() {
                gemm(
                    1.0,
                    dyb,
                    Layout::row_major(g.cout, vout),
                    xb,
                    Layout::row_major(k, vin).transposed(),
                    1.0,
                    gw,
                    Layout::row_major(g.cout, k),
                );
                gemm(
                    1.0,
                    w,
                    Layout::row_major(g.cout, k).transposed(),
                    dyb,
                    Layout::row_major(g.cout, vout),
                    0.0,
                    dxb,
                    Layout::row_major(k, vin),
                );
                continue;
            }
            let mut t0 = 0;
            while t0 < to {
                let nt = fpc.min(to - t0);
                let n = nt * ho * wo;
                let p0 = t0 * ho * wo;
                let dy_view = Layout {
                    rows: g.cout,
                    cols: n,
                    row_stride: vout,
                    col_stride: 1,
                };
                let col = &mut col[..k * n];
                im2col(xb, &g, t0, nt, col);
                gemm(
                    1.0,
                    &dyb[p0..],
                    dy_view,
                    col,
                    Layout::row_major(k, n).transposed(),
                    1.0,
                    gw,
                    Layout::row_major(g.cout, k),
                );
                let dcol = &mut dcol[..k * n];
                gemm(
                    1.0,
                    w,
                    Layout::row_major(g.cout, k).transposed(),
                    &dyb[p0..],
                    dy_view,
                    0.0,
                    dcol,
                    Layout::row_major(k, n),
                );
                col2im(dcol, &g, t0, nt, dxb);
                t0 += nt;
            }
        }
        Ok(dx)
    }
}

impl Module for Conv3d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join_path(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join_path(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join_path(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join_path(prefix, "bias"), b);
        }
    }
}

pub(crate) fn conv_output_dims(
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> [usize; 3] {
    let mut out = [0; 3];
    for i in 0..3 {
        out[i] = (input[i] + 2 * padding[i] - kernel[i]) / stride[i] + 1;
    }
    out
}

/// Maps output coordinate `o` and kernel offset `d` to an input coordinate.
#[inline]
fn source(o: usize, d: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + d).checked_sub(pad)?;
    (i < len).then_some(i)
}

/// Fills `col` (K rows × `nt·Ho·Wo` columns) for output frames `t0..t0+nt`.
fn im2col(xb: &[f64], g: &Geometry, t0: usize, nt: usize, col: &mut [f64]) {
    let [ti, hi, wi] = g.input;
    let [_, ho, wo] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let n = nt * ho * wo;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &xb[c * ti * hi * wi..(c + 1) * ti * hi * wi];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut col[row * n..(row + 1) * n];
                    let mut j = 0;
                    for ot in t0..t0 + nt {
                        let Some(it) = source(ot, dt, st, pt, ti) else {
                            dst[j..j + ho * wo].fill(0.0);
                            j += ho * wo;
                            continue;
                        };
                        for oh in 0..ho {
                            let Some(ih) = source(oh, dh, sh, ph, hi) else {
                                dst[j..j + wo].fill(0.0);
                                j += wo;
                                continue;
                            };
                            let src = &xc[(it * hi + ih) * wi..(it * hi + ih + 1) * wi];
                            for ow in 0..wo {
                                dst[j] = match source(ow, dw, sw, pw, wi) {
                                    Some(iw) => src[iw],
                                    None => 0.0,
                                };
                                j += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds `dcol` back onto the input gradient.
fn col2im(dcol: &[f64], g: &Geometry, t0: usize, nt: usize, dxb: &mut [f64]) {
    let [ti, hi, wi] = g.input;
    let [_, ho, wo] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let n = nt * ho * wo;
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dxb[c * ti * hi * wi..(c + 1) * ti * hi * wi];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &dcol[row * n..(row + 1) * n];
                    let mut j = 0;
                    for ot in t0..t0 + nt {
                        let Some(it) = source(ot, dt, st, pt, ti) else {
                            j += ho * wo;
                            continue;
                        };
                        for oh in 0..ho {
                            let Some(ih) = source(oh, dh, sh, ph, hi) else {
                                j += wo;
                                continue;
                            };
                            let dst = &mut dxc[(it * hi + ih) * wi..(it * hi + ih + 1) * wi];
                            for ow in 0..wo {
                                if let Some(iw) = source(ow, dw, sw, pw, wi) {
                                    dst[iw] += src[j];
                                }
                                j += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
