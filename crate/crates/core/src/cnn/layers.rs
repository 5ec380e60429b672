use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Result};
use crate::numeric::{gemm, Rng, Strided, Tensor3};

/// Element-wise activation used inside convolutional blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// ReLU uses the subgradient 0 at `z = 0`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Average,
}

/// Convolution filter bank. `kernel` is laid out as
/// `[filter][in_channel][row][col]`, i.e. a `filters x (in_channels * k * k)`
/// row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvOperator {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvOperator {
    pub fn zeros(kernel_size: usize, in_channels: usize, filters: usize) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || kernel_size == 0 {
            return Err(arg_err!("kernel size must be odd, got {kernel_size}"));
        }
        Ok(Self {
            kernel_size,
            in_channels,
            filters,
            kernel: vec![0.0; filters * in_channels * kernel_size * kernel_size],
            bias: vec![0.0; filters],
        })
    }

    /// He-uniform initialization scaled by fan-in; zero bias.
    pub fn he_uniform(kernel_size: usize, in_channels: usize, filters: usize, rng: &mut Rng) -> Result<Self> {
        let mut op = Self::zeros(kernel_size, in_channels, filters)?;
        let limit = (6.0 / op.fan_in() as f64).sqrt();
        for w in &mut op.kernel {
            *w = rng.uniform_range(-limit, limit);
        }
        Ok(op)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    #[inline]
    pub fn weight(&self, filter: usize, channel: usize, row: usize, col: usize) -> f64 {
        let k = self.kernel_size;
        self.kernel[((filter * self.in_channels + channel) * k + row) * k + col]
    }

    #[inline]
    pub fn weight_mut(&mut self, filter: usize, channel: usize, row: usize, col: usize) -> &mut f64 {
        let k = self.kernel_size;
        &mut self.kernel[((filter * self.in_channels + channel) * k + row) * k + col]
    }
}

/// Zero-padded patch matrix: row `(ch, ki, kj)`, column `(r, c)`.
pub(crate) fn im2col(input: &Tensor3, k: usize) -> Vec<f64> {
    let (h, w, p) = input.shape();
    let half = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; p * k * k * hw];
    for ch in 0..p {
        let plane = input.channel(ch);
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dr = ki as isize - half;
                let dc = kj as isize - half;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sr as usize * w..(sr as usize + 1) * w];
                    let out_row = &mut dst[r * w..(r + 1) * w];
                    let c_lo = (-dc).max(0) as usize;
                    let c_hi = (w as isize - dc).min(w as isize).max(0) as usize;
                    for c in c_lo..c_hi {
                        out_row[c] = src_row[(c as isize + dc) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch-matrix gradient back onto an input-shaped tensor.
pub(crate) fn col2im(cols: &[f64], h: usize, w: usize, p: usize, k: usize) -> Tensor3 {
    let half = (k / 2) as isize;
    let hw = h * w;
    let mut out = Tensor3::zeros(h, w, p);
    for ch in 0..p {
        let plane = out.channel_mut(ch);
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dr = ki as isize - half;
                let dc = kj as isize - half;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let c_lo = (-dc).max(0) as usize;
                    let c_hi = (w as isize - dc).min(w as isize).max(0) as usize;
                    for c in c_lo..c_hi {
                        plane[sr as usize * w + (c as isize + dc) as usize] += src[r * w + c];
                    }
                }
            }
        }
    }
    out
}

fn conv_from_cols(cols: &[f64], h: usize, w: usize, op: &ConvOperator) -> Tensor3 {
    let hw = h * w;
    let depth = op.fan_in();
    let mut out = vec![0.0; op.filters * hw];
    for (j, b) in op.bias.iter().enumerate() {
        out[j * hw..(j + 1) * hw].fill(*b);
    }
    gemm(
        op.filters,
        depth,
        hw,
        1.0,
        Strided::row_major(&op.kernel, depth),
        Strided::row_major(cols, hw),
        1.0,
        &mut out,
    );
    Tensor3::from_raw(h, w, op.filters, out)
}

/// Same-size zero-padded convolution (cross-correlation form) plus bias.
pub fn convolve(input: &Tensor3, op: &ConvOperator) -> Result<Tensor3> {
    if input.channels() != op.in_channels {
        return Err(dim_err!("convolution expects {} channels, got {}", op.in_channels, input.channels()));
    }
    let cols = im2col(input, op.kernel_size);
    Ok(conv_from_cols(&cols, input.dim1(), input.dim2(), op))
}

pub(crate) fn convolve_with_cols(input: &Tensor3, op: &ConvOperator) -> (Tensor3, Vec<f64>) {
    let cols = im2col(input, op.kernel_size);
    let out = conv_from_cols(&cols, input.dim1(), input.dim2(), op);
    (out, cols)
}

/// Gradients of a convolution given the upstream gradient `d_out`.
/// Accumulates into `d_kernel`/`d_bias`; returns the input gradient when requested.
pub(crate) fn convolve_backward(
    cols: &[f64],
    input_shape: (usize, usize, usize),
    op: &ConvOperator,
    d_out: &Tensor3,
    d_kernel: &mut [f64],
    d_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Tensor3> {
    let (h, w, p) = input_shape;
    let hw = h * w;
    let depth = op.fan_in();
    let g = d_out.data();
    for (j, db) in d_bias.iter_mut().enumerate() {
        *db += g[j * hw..(j + 1) * hw].iter().sum::<f64>();
    }
    gemm(
        op.filters,
        hw,
        depth,
        1.0,
        Strided::row_major(g, hw),
        Strided::transposed(cols, hw),
        1.0,
        d_kernel,
    );
    if !want_input_grad {
        return None;
    }
    let mut d_cols = vec![0.0; depth * hw];
    gemm(
        depth,
        op.filters,
        hw,
        1.0,
        Strided::transposed(&op.kernel, depth),
        Strided::row_major(g, hw),
        0.0,
        &mut d_cols,
    );
    Some(col2im(&d_cols, h, w, p, op.kernel_size))
}

pub fn activate(x: &Tensor3, kind: Activation) -> Tensor3 {
    x.map(|z| kind.apply(z))
}

/// Pooled tensor plus, for max pooling, the flat source index chosen in each window.
pub(crate) struct Pooled {
    pub out: Tensor3,
    pub argmax: Vec<usize>,
}

pub(crate) fn pool_with_argmax(x: &Tensor3, kind: PoolKind, size: usize) -> Result<Pooled> {
    let (h, w, q) = x.shape();
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(dim_err!("pool size {size} does not divide {h}x{w}"));
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = Tensor3::zeros(oh, ow, q);
    let mut argmax = Vec::with_capacity(if kind == PoolKind::Max { oh * ow * q } else { 0 });
    let inv = 1.0 / (size * size) as f64;
    for k in 0..q {
        let plane = x.channel(k);
        let base = k * h * w;
        for r in 0..oh {
            for c in 0..ow {
                match kind {
                    PoolKind::Max => {
                        let mut best_idx = (r * size) * w + c * size;
                        let mut best = plane[best_idx];
                        for dr in 0..size {
                            for dc in 0..size {
                                let idx = (r * size + dr) * w + c * size + dc;
                                // Strict comparison: first in row-major scan wins ties.
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out.set(r, c, k, best);
                        argmax.push(base + best_idx);
                    }
                    PoolKind::Average => {
                        let mut s = 0.0;
                        for dr in 0..size {
                            for dc in 0..size {
                                s += plane[(r * size + dr) * w + c * size + dc];
                            }
                        }
                        out.set(r, c, k, s * inv);
                    }
                }
            }
        }
    }
    Ok(Pooled { out, argmax })
}

pub fn pool(x: &Tensor3, kind: PoolKind, size: usize) -> Result<Tensor3> {
    pool_with_argmax(x, kind, size).map(|p| p.out)
}

pub(crate) fn pool_backward(
    d_out: &Tensor3,
    input_shape: (usize, usize, usize),
    kind: PoolKind,
    size: usize,
    argmax: &[usize],
) -> Tensor3 {
    let (h, w, q) = input_shape;
    let mut d_in = Tensor3::zeros(h, w, q);
    match kind {
        PoolKind::Max => {
            let dst = d_in.data_mut();
            for (g, &idx) in d_out.data().iter().zip(argmax) {
                dst[idx] += g;
            }
        }
        PoolKind::Average => {
            let inv = 1.0 / (size * size) as f64;
            let (oh, ow) = (h / size, w / size);
            for k in 0..q {
                for r in 0..oh {
                    for c in 0..ow {
                        let g = d_out.get(r, c, k) * inv;
                        for dr in 0..size {
                            for dc in 0..size {
                                d_in.set(r * size + dr, c * size + dc, k, g);
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}
