use serde::{Deserialize, Serialize};

use super::layers::{
    convolve_backward, convolve_with_cols, pool_backward, pool_with_argmax, Activation, ConvOperator, PoolKind,
};
use crate::error::{arg_err, dim_err, Result};
use crate::numeric::{Mat, Rng, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub filters: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub pool: PoolKind,
    pub pool_size: usize,
}

impl ConvBlockSpec {
    pub fn relu_max(filters: usize) -> Self {
        Self { filters, kernel_size: 3, activation: Activation::Relu, pool: PoolKind::Max, pool_size: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub spec: ConvBlockSpec,
    pub op: ConvOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseActivation {
    Relu,
    Linear,
}

/// Fully connected layer `y = act(W x + b)` with `W` shaped `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Mat,
    pub bias: Vec<f64>,
    pub activation: DenseActivation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Shape-only description of a sensor network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub input_channels: usize,
    pub blocks: Vec<ConvBlockSpec>,
    /// Widths of the hidden ReLU dense layers.
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl Architecture {
    /// Four relu/max-pool blocks on 64x64 grayscale, predicting `(sin θ, cos θ)`.
    pub fn pendulum() -> Self {
        Self {
            input_size: 64,
            input_channels: 1,
            blocks: [8, 16, 32, 64].into_iter().map(ConvBlockSpec::relu_max).collect(),
            hidden: vec![],
            outputs: 2,
        }
    }

    /// Five blocks on 128x128 grayscale, predicting the pole angle in degrees.
    pub fn cartpole() -> Self {
        Self {
            input_size: 128,
            input_channels: 1,
            blocks: [8, 16, 32, 64, 128].into_iter().map(ConvBlockSpec::relu_max).collect(),
            hidden: vec![],
            outputs: 1,
        }
    }

    /// Cart-pole network with the 256-filter final block.
    pub fn cartpole_paper_scale() -> Self {
        Self {
            input_size: 128,
            input_channels: 1,
            blocks: [16, 32, 64, 128, 256].into_iter().map(ConvBlockSpec::relu_max).collect(),
            hidden: vec![],
            outputs: 1,
        }
    }

    pub fn pendulum_paper_scale() -> Self {
        Self {
            input_size: 64,
            input_channels: 1,
            blocks: [16, 32, 64, 128].into_iter().map(ConvBlockSpec::relu_max).collect(),
            hidden: vec![],
            outputs: 2,
        }
    }

    /// Number of trainable values, or `None` when the shape chain is
    /// invalid or the count overflows.
    pub fn param_count(&self) -> Option<usize> {
        let mut size = self.input_size;
        let mut channels = self.input_channels;
        let mut total: usize = 0;
        for b in &self.blocks {
            if b.pool_size == 0 || !size.is_multiple_of(b.pool_size) || b.kernel_size % 2 == 0 {
                return None;
            }
            let k2 = b.kernel_size.checked_mul(b.kernel_size)?;
            let kernel = b.filters.checked_mul(channels)?.checked_mul(k2)?;
            total = total.checked_add(kernel)?.checked_add(b.filters)?;
            size /= b.pool_size;
            channels = b.filters;
        }
        let mut width = size.checked_mul(size)?.checked_mul(channels)?;
        for &h in self.hidden.iter().chain(std::iter::once(&self.outputs)) {
            total = total.checked_add(width.checked_mul(h)?)?.checked_add(h)?;
            width = h;
        }
        Some(total)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "pendulum" => Some(Self::pendulum()),
            "cartpole" => Some(Self::cartpole()),
            "pendulum-paper" => Some(Self::pendulum_paper_scale()),
            "cartpole-paper" => Some(Self::cartpole_paper_scale()),
            _ => None,
        }
    }
}

/// Per-block intermediate signals: convolution output Ψ, activation A, pooled P.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTaps {
    pub psi: Tensor3,
    pub activation: Tensor3,
    pub pooled: Tensor3,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Vec<f64>,
    pub taps: Vec<BlockTaps>,
}

/// Everything the backward pass needs from a forward pass.
pub(crate) struct Trace {
    taps: Vec<BlockTaps>,
    cols: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
    dense_inputs: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

/// Convolutional sensor: ordered blocks followed by a dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub input_shape: (usize, usize, usize),
    pub blocks: Vec<ConvBlock>,
    pub dense: Vec<DenseLayer>,
}

fn xavier_dense(inputs: usize, outputs: usize, activation: DenseActivation, rng: &mut Rng) -> DenseLayer {
    let limit = match activation {
        DenseActivation::Relu => (6.0 / inputs as f64).sqrt(),
        DenseActivation::Linear => (6.0 / (inputs + outputs) as f64).sqrt(),
    };
    let w = (0..inputs * outputs).map(|_| rng.uniform_range(-limit, limit)).collect();
    DenseLayer { weights: Mat::from_raw(outputs, inputs, w), bias: vec![0.0; outputs], activation }
}

impl CnnModel {
    /// Random initialization: He-uniform for ReLU layers, Xavier-uniform for the linear head.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        let mut size = arch.input_size;
        let mut channels = arch.input_channels;
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for spec in &arch.blocks {
            if spec.pool_size == 0 || !size.is_multiple_of(spec.pool_size) {
                return Err(arg_err!("pool size {} does not divide spatial size {size}", spec.pool_size));
            }
            let op = ConvOperator::he_uniform(spec.kernel_size, channels, spec.filters, rng)?;
            blocks.push(ConvBlock { spec: *spec, op });
            size /= spec.pool_size;
            channels = spec.filters;
        }
        let mut width = size * size * channels;
        let mut dense = Vec::new();
        for &h in &arch.hidden {
            dense.push(xavier_dense(width, h, DenseActivation::Relu, rng));
            width = h;
        }
        dense.push(xavier_dense(width, arch.outputs, DenseActivation::Linear, rng));
        Ok(Self { input_shape: (arch.input_size, arch.input_size, arch.input_channels), blocks, dense })
    }

    /// Model with every weight and bias set to zero.
    pub fn zeroed(arch: &Architecture) -> Result<Self> {
        let mut m = Self::init(arch, &mut Rng::new(0))?;
        for p in m.params_mut() {
            p.fill(0.0);
        }
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        let n = self.dense.len();
        Architecture {
            input_size: self.input_shape.0,
            input_channels: self.input_shape.2,
            blocks: self.blocks.iter().map(|b| b.spec).collect(),
            hidden: self.dense[..n - 1].iter().map(DenseLayer::outputs).collect(),
            outputs: self.dense[n - 1].outputs(),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn outputs(&self) -> usize {
        self.dense.last().map_or(0, DenseLayer::outputs)
    }

    /// Spatial side and channel count of each block's pooled output.
    pub fn pooled_shapes(&self) -> Vec<(usize, usize)> {
        let mut size = self.input_shape.0;
        self.blocks
            .iter()
            .map(|b| {
                size /= b.spec.pool_size;
                (size, b.spec.filters)
            })
            .collect()
    }

    /// Validates shape-chain consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        let (h, w, mut ch) = self.input_shape;
        if h != w || h == 0 {
            return Err(dim_err!("input must be square, got {h}x{w}"));
        }
        let mut size = h;
        for (i, b) in self.blocks.iter().enumerate() {
            let op = &b.op;
            if op.in_channels != ch
                || op.filters != b.spec.filters
                || op.kernel_size != b.spec.kernel_size
                || op.kernel_size % 2 == 0
                || op.kernel.len() != op.filters * op.fan_in()
                || op.bias.len() != op.filters
            {
                return Err(dim_err!("block {} has inconsistent shapes", i + 1));
            }
            if b.spec.pool_size == 0 || size % b.spec.pool_size != 0 {
                return Err(dim_err!("block {} pool size does not divide {size}", i + 1));
            }
            size /= b.spec.pool_size;
            ch = op.filters;
        }
        let mut width = size * size * ch;
        for (i, d) in self.dense.iter().enumerate() {
            if d.inputs() != width || d.bias.len() != d.outputs() {
                return Err(dim_err!("dense layer {i} expects {} inputs, chain gives {width}", d.inputs()));
            }
            width = d.outputs();
        }
        match self.dense.last() {
            Some(d) if d.activation == DenseActivation::Linear => Ok(()),
            _ => Err(dim_err!("dense head must end with a linear layer")),
        }
    }

    fn check_input(&self, image: &Tensor3) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(dim_err!("image shape {:?} does not match model input {:?}", image.shape(), self.input_shape));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, image: &Tensor3) -> Result<Trace> {
        self.check_input(image)?;
        let mut taps: Vec<BlockTaps> = Vec::with_capacity(self.blocks.len());
        let mut cols = Vec::with_capacity(self.blocks.len());
        let mut argmax = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = taps.last().map_or(image, |t| &t.pooled);
            let (psi, c) = convolve_with_cols(input, &block.op);
            let act = psi.map(|z| block.spec.activation.apply(z));
            let pooled = pool_with_argmax(&act, block.spec.pool, block.spec.pool_size)?;
            cols.push(c);
            argmax.push(pooled.argmax);
            taps.push(BlockTaps { psi, activation: act, pooled: pooled.out });
        }
        let mut x = taps.last().map_or(image, |t| &t.pooled).flatten();
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        let mut dense_pre = Vec::with_capacity(self.dense.len());
        for layer in &self.dense {
            let z = dense_apply(layer, &x);
            let a = match layer.activation {
                DenseActivation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                DenseActivation::Linear => z.clone(),
            };
            dense_inputs.push(std::mem::replace(&mut x, a));
            dense_pre.push(z);
        }
        Ok(Trace { taps, cols, argmax, dense_inputs, dense_pre, output: x })
    }

    /// Full forward pass retaining Ψ, A and P for every block.
    pub fn forward(&self, image: &Tensor3) -> Result<Forward> {
        let t = self.trace(image)?;
        Ok(Forward { output: t.output, taps: t.taps })
    }

    pub fn predict(&self, image: &Tensor3) -> Result<Vec<f64>> {
        Ok(self.trace(image)?.output)
    }

    /// Runs only the first `blocks` convolutional blocks.
    pub fn forward_blocks(&self, image: &Tensor3, blocks: usize) -> Result<Vec<BlockTaps>> {
        self.check_input(image)?;
        if blocks > self.blocks.len() {
            return Err(arg_err!("model has {} blocks, asked for {blocks}", self.blocks.len()));
        }
        let mut taps: Vec<BlockTaps> = Vec::with_capacity(blocks);
        for block in &self.blocks[..blocks] {
            let input = taps.last().map_or(image, |t| &t.pooled);
            let (psi, _) = convolve_with_cols(input, &block.op);
            let act = psi.map(|z| block.spec.activation.apply(z));
            let pooled = pool_with_argmax(&act, block.spec.pool, block.spec.pool_size)?.out;
            taps.push(BlockTaps { psi, activation: act, pooled });
        }
        Ok(taps)
    }

    /// Parameter slices in canonical order: each block's kernel then bias,
    /// then each dense layer's weights then bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.blocks {
            out.push(&b.op.kernel);
            out.push(&b.op.bias);
        }
        for d in &self.dense {
            out.push(d.weights.data());
            out.push(&d.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.op.kernel);
            out.push(&mut b.op.bias);
        }
        for d in &mut self.dense {
            out.push(d.weights.data_mut());
            out.push(&mut d.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// SSE loss and its gradient for one labeled image.
    pub fn backward(&self, image: &Tensor3, target: &[f64]) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(image, target, &mut grads)?;
        Ok((loss, grads))
    }

    pub(crate) fn accumulate_gradients(&self, image: &Tensor3, target: &[f64], grads: &mut Gradients) -> Result<f64> {
        let trace = self.trace(image)?;
        let loss = sse_loss(&trace.output, target)?;
        let mut delta: Vec<f64> = trace.output.iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect();

        let nb = self.blocks.len();
        for (li, layer) in self.dense.iter().enumerate().rev() {
            if layer.activation == DenseActivation::Relu {
                for (d, z) in delta.iter_mut().zip(&trace.dense_pre[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &trace.dense_inputs[li];
            let (gw, gb) = grads.pair_mut(2 * (nb + li));
            let n_in = layer.inputs();
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                if *d != 0.0 {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let mut dx = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (g, w) in dx.iter_mut().zip(layer.weights.row(o)) {
                        *g += d * w;
                    }
                }
            }
            delta = dx;
        }

        if nb == 0 {
            return Ok(loss);
        }
        let (ph, pw, pc) = trace.taps[nb - 1].pooled.shape();
        let mut d_pooled = Tensor3::unflatten(ph, pw, pc, &delta);
        for bi in (0..nb).rev() {
            let block = &self.blocks[bi];
            let taps = &trace.taps[bi];
            let mut d_act =
                pool_backward(&d_pooled, taps.activation.shape(), block.spec.pool, block.spec.pool_size, &trace.argmax[bi]);
            for ((g, z), a) in d_act.data_mut().iter_mut().zip(taps.psi.data()).zip(taps.activation.data()) {
                *g *= block.spec.activation.derivative(*z, *a);
            }
            let input_shape = if bi == 0 { image.shape() } else { trace.taps[bi - 1].pooled.shape() };
            let (gk, gb) = grads.pair_mut(2 * bi);
            let d_in = convolve_backward(&trace.cols[bi], input_shape, &block.op, &d_act, gk, gb, bi > 0);
            if let Some(d) = d_in {
                d_pooled = d;
            }
        }
        Ok(loss)
    }
}

fn dense_apply(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    (0..layer.outputs())
        .map(|o| layer.bias[o] + layer.weights.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

/// Gradient buffers matching [`CnnModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self { tensors: model.params().iter().map(|p| vec![0.0; p.len()]).collect() }
    }

    fn pair_mut(&mut self, first: usize) -> (&mut [f64], &mut [f64]) {
        let (a, b) = self.tensors.split_at_mut(first + 1);
        (&mut a[first], &mut b[0])
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}

/// Squared Euclidean error `‖ŷ − y‖²`.
pub fn sse_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(dim_err!("prediction has {} outputs, target {}", prediction.len(), target.len()));
    }
    Ok(prediction.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum())
}
