//! Minimal differentiable network core.
//!
//! Forward evaluation, softmax cross-entropy, and exact reverse-mode
//! gradients with respect to both parameters and inputs, for a fixed layer
//! menu: dense, relu, conv2d (valid padding), flatten. Everything is f64 and
//! every operation is a pure function of its arguments.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerKind {
    fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Flatten => "flatten",
        }
    }
}

/// Contiguous parameter block of one layer: weights followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub layer: usize,
    pub offset: usize,
    pub weight_shape: Vec<usize>,
    pub bias_len: usize,
}

impl ParamBlock {
    pub fn weight_len(&self) -> usize {
        if self.weight_shape.is_empty() {
            0
        } else {
            self.weight_shape.iter().product()
        }
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.bias_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Architecture description: ordered layer list plus the per-sample input
/// shape. Validated so that adjacent layers compose and the output is a
/// class-score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input_shape: Vec<usize>,
    layers: Vec<LayerKind>,
    /// Per-sample shape after each layer.
    shapes: Vec<Vec<usize>>,
    blocks: Vec<ParamBlock>,
    param_count: usize,
}

fn layer_output_shape(layer: usize, kind: &LayerKind, input: &[usize]) -> Result<Vec<usize>> {
    let mismatch = |detail: String| Error::ShapeMismatch {
        layer,
        kind: kind.name().to_string(),
        detail,
    };
    match kind {
        LayerKind::Dense { inputs, outputs } => {
            if input != [*inputs] {
                return Err(mismatch(format!(
                    "expected input shape [{inputs}], got {input:?}"
                )));
            }
            Ok(vec![*outputs])
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => {
            if input.len() != 3 || input[0] != *in_channels {
                return Err(mismatch(format!(
                    "expected input shape [{in_channels}, h, w], got {input:?}"
                )));
            }
            let (h, w) = (input[1], input[2]);
            if *kernel == 0 || *stride == 0 || h < *kernel || w < *kernel {
                return Err(mismatch(format!(
                    "kernel {kernel} stride {stride} does not fit input {input:?}"
                )));
            }
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            Ok(vec![*out_channels, oh, ow])
        }
    }
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerKind>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "model needs at least one layer".into(),
            ));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut blocks = Vec::new();
        let mut offset = 0usize;
        let mut cur = input_shape.clone();
        for (i, kind) in layers.iter().enumerate() {
            let out = layer_output_shape(i, kind, &cur)?;
            let (weight_shape, bias_len) = match kind {
                LayerKind::Dense { inputs, outputs } => (vec![*outputs, *inputs], *outputs),
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                    *out_channels,
                ),
                _ => (vec![], 0),
            };
            let block = ParamBlock {
                layer: i,
                offset,
                weight_shape,
                bias_len,
            };
            offset += block.len();
            blocks.push(block);
            shapes.push(out.clone());
            cur = out;
        }
        if cur.len() != 1 || cur[0] < 2 {
            return Err(Error::InvalidConfig(format!(
                "final layer must produce a class-score vector of length >= 2, got {cur:?}"
            )));
        }
        Ok(ModelSpec {
            input_shape,
            layers,
            shapes,
            blocks,
            param_count: offset,
        })
    }

    /// Dense/relu stack: dims = [input, hidden..., classes].
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("mlp needs at least two dims".into()));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(LayerKind::Dense {
                inputs: dims[i],
                outputs: dims[i + 1],
            });
            if i + 2 < dims.len() {
                layers.push(LayerKind::Relu);
            }
        }
        ModelSpec::new(vec![dims[0]], layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerKind] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// FNV-1a over a canonical description, for checkpoint integrity.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01B3);
            }
        };
        for d in &self.input_shape {
            eat(&d.to_le_bytes());
        }
        for l in &self.layers {
            eat(l.name().as_bytes());
            match l {
                LayerKind::Dense { inputs, outputs } => {
                    eat(&inputs.to_le_bytes());
                    eat(&outputs.to_le_bytes());
                }
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    eat(&in_channels.to_le_bytes());
                    eat(&out_channels.to_le_bytes());
                    eat(&kernel.to_le_bytes());
                    eat(&stride.to_le_bytes());
                }
                _ => {}
            }
        }
        h
    }

    /// Fan-in scaled uniform weights, zero biases, from a seeded stream.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut flat = vec![0.0; self.param_count];
        let mut r = rng::rng_from(seed);
        for block in &self.blocks {
            let fan_in = match &self.layers[block.layer] {
                LayerKind::Dense { inputs, .. } => *inputs,
                LayerKind::Conv2d {
                    in_channels,
                    kernel,
                    ..
                } => in_channels * kernel * kernel,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = rng::uniform_vec(&mut r, block.weight_len(), -bound, bound);
            flat[block.offset..block.offset + block.weight_len()].copy_from_slice(&w);
        }
        ModelParams {
            flat,
            blocks: self.blocks.clone(),
        }
    }

    pub fn zero_params(&self) -> ModelParams {
        ModelParams {
            flat: vec![0.0; self.param_count],
            blocks: self.blocks.clone(),
        }
    }

    pub fn params_from_flat(&self, flat: Vec<f64>) -> Result<ModelParams> {
        if flat.len() != self.param_count {
            return Err(Error::LengthMismatch {
                expected: self.param_count,
                got: flat.len(),
            });
        }
        Ok(ModelParams {
            flat,
            blocks: self.blocks.clone(),
        })
    }
}

/// Flattened parameter vector with a per-layer block registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    flat: Vec<f64>,
    blocks: Vec<ParamBlock>,
}

impl ModelParams {
    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Elementwise sum with a perturbation vector; the original is untouched.
    pub fn perturbed(&self, v: &[f64]) -> Result<ModelParams> {
        if v.len() != self.flat.len() {
            return Err(Error::LengthMismatch {
                expected: self.flat.len(),
                got: v.len(),
            });
        }
        let flat = self.flat.iter().zip(v).map(|(a, b)| a + b).collect();
        Ok(ModelParams {
            flat,
            blocks: self.blocks.clone(),
        })
    }

    fn slices(&self, block: &ParamBlock) -> (&[f64], &[f64]) {
        let w = &self.flat[block.offset..block.offset + block.weight_len()];
        let b = &self.flat[block.offset + block.weight_len()..block.offset + block.len()];
        (w, b)
    }
}

/// Inputs plus integer labels of equal batch length.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() == 0 || labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.batch() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.batch(),
                got: labels.len(),
            });
        }
        Ok(LabeledBatch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        for &l in &self.labels {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        Ok(())
    }
}

fn check_input_shape(spec: &ModelSpec, inputs: &Tensor) -> Result<()> {
    if inputs.batch() == 0 {
        return Err(Error::EmptyBatch);
    }
    if inputs.sample_shape() != spec.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: 0,
            kind: spec.layers[0].name().to_string(),
            detail: format!(
                "model expects per-sample shape {:?}, got {:?}",
                spec.input_shape(),
                inputs.sample_shape()
            ),
        });
    }
    Ok(())
}

fn check_params(spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    if params.len() != spec.param_count {
        return Err(Error::LengthMismatch {
            expected: spec.param_count,
            got: params.len(),
        });
    }
    Ok(())
}

/// Activations recorded during a forward pass: `values[0]` is the input and
/// `values[i + 1]` is the output of layer `i`.
pub(crate) struct Trace {
    pub values: Vec<Tensor>,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        self.values.last().unwrap()
    }
}

fn dense_forward(x: &Tensor, w: &[f64], bias: &[f64], out_dim: usize) -> Tensor {
    let b = x.batch();
    let in_dim = x.sample_len();
    let mut out = vec![0.0; b * out_dim];
    for s in 0..b {
        let xs = x.sample(s);
        let os = &mut out[s * out_dim..(s + 1) * out_dim];
        for (o, slot) in os.iter_mut().enumerate() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for (wi, xi) in row.iter().zip(xs) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }
    Tensor::from_parts(vec![b, out_dim], out)
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &Tensor,
    w: &[f64],
    bias: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    out_shape: &[usize],
) -> Tensor {
    let b = x.batch();
    let (h, wd) = (x.sample_shape()[1], x.sample_shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = vec![0.0; b * out_ch * oh * ow];
    let in_plane = h * wd;
    let out_plane = oh * ow;
    for s in 0..b {
        let xs = x.sample(s);
        let os = &mut out[s * out_ch * out_plane..(s + 1) * out_ch * out_plane];
        for oc in 0..out_ch {
            let woc = &w[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..in_ch {
                        let plane = &xs[ic * in_plane..(ic + 1) * in_plane];
                        let wic = &woc[ic * k * k..(ic + 1) * k * k];
                        for ky in 0..k {
                            let row = (oy * stride + ky) * wd + ox * stride;
                            for kx in 0..k {
                                acc += wic[ky * k + kx] * plane[row + kx];
                            }
                        }
                    }
                    os[oc * out_plane + oy * ow + ox] = acc;
                }
            }
        }
    }
    let mut shape = vec![b];
    shape.extend_from_slice(out_shape);
    Tensor::from_parts(shape, out)
}

pub(crate) fn forward_trace(
    spec: &ModelSpec,
    params: &ModelParams,
    inputs: &Tensor,
) -> Result<Trace> {
    check_input_shape(spec, inputs)?;
    check_params(spec, params)?;
    let b = inputs.batch();
    let mut values = Vec::with_capacity(spec.layers.len() + 1);
    values.push(inputs.clone());
    for (i, kind) in spec.layers.iter().enumerate() {
        let x = values.last().unwrap();
        let block = &spec.blocks[i];
        let y = match kind {
            LayerKind::Dense { outputs, .. } => {
                let (w, bias) = params.slices(block);
                dense_forward(x, w, bias, *outputs)
            }
            LayerKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            LayerKind::Flatten => {
                let mut shape = vec![b];
                shape.extend_from_slice(&spec.shapes[i]);
                x.reshaped(shape)?
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (w, bias) = params.slices(block);
                conv_forward(
                    x,
                    w,
                    bias,
                    *in_channels,
                    *out_channels,
                    *kernel,
                    *stride,
                    &spec.shapes[i],
                )
            }
        };
        values.push(y);
    }
    Ok(Trace { values })
}

/// Logits of shape [batch, classes]. Pure and deterministic.
pub fn forward(spec: &ModelSpec, params: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(spec, params, inputs)?.values.pop().unwrap())
}

/// Smallest absolute relu pre-activation in the network, or infinity when
/// there is none. Finite-difference gradient checks are only trustworthy
/// when this margin comfortably exceeds the probe step.
pub fn relu_margin(spec: &ModelSpec, params: &ModelParams, inputs: &Tensor) -> Result<f64> {
    let trace = forward_trace(spec, params, inputs)?;
    let mut margin = f64::INFINITY;
    for (i, kind) in spec.layers.iter().enumerate() {
        if matches!(kind, LayerKind::Relu) {
            for &v in trace.values[i].data() {
                margin = margin.min(v.abs());
            }
        }
    }
    Ok(margin)
}

/// Row-wise softmax, stabilized against large logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.ndim() != 2 {
        return Err(Error::BadTensorShape {
            shape: logits.shape().to_vec(),
            len: logits.len(),
        });
    }
    let m = logits.sample_len();
    let mut out = vec![0.0; logits.len()];
    for s in 0..logits.batch() {
        let row = logits.sample(s);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[s * m..(s + 1) * m];
        let mut z = 0.0;
        for (oi, &v) in o.iter_mut().zip(row) {
            let e = (v - max).exp();
            *oi = e;
            z += e;
        }
        for oi in o.iter_mut() {
            *oi /= z;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Per-sample softmax cross-entropy values.
pub fn cross_entropy_per_sample(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.batch() == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.batch() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: logits.batch(),
            got: labels.len(),
        });
    }
    let m = logits.sample_len();
    let mut out = Vec::with_capacity(labels.len());
    for (s, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: m,
            });
        }
        let row = logits.sample(s);
        out.push(log_sum_exp(row) - row[y]);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let per = cross_entropy_per_sample(logits, labels)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// d(sum of per-sample losses)/d(logits) = softmax - onehot, row per sample.
pub(crate) fn ce_dlogits(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut p = softmax(logits)?;
    let m = p.sample_len();
    for (s, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: m,
            });
        }
        p.sample_mut(s)[y] -= 1.0;
    }
    Ok(p)
}

fn dense_backward(
    x: &Tensor,
    d_out: &Tensor,
    w: &[f64],
    out_dim: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Tensor {
    let b = x.batch();
    let in_dim = x.sample_len();
    let mut d_in = vec![0.0; b * in_dim];
    for s in 0..b {
        let xs = x.sample(s);
        let dys = d_out.sample(s);
        let dxs = &mut d_in[s * in_dim..(s + 1) * in_dim];
        for o in 0..out_dim {
            let dy = dys[o];
            d_b[o] += dy;
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let dwrow = &mut d_w[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwrow[i] += dy * xs[i];
                dxs[i] += dy * wrow[i];
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), d_in)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &Tensor,
    d_out: &Tensor,
    w: &[f64],
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Tensor {
    let b = x.batch();
    let (h, wd) = (x.sample_shape()[1], x.sample_shape()[2]);
    let (oh, ow) = (d_out.sample_shape()[1], d_out.sample_shape()[2]);
    let in_plane = h * wd;
    let out_plane = oh * ow;
    let mut d_in = vec![0.0; x.len()];
    for s in 0..b {
        let xs = x.sample(s);
        let dys = d_out.sample(s);
        let dxs = &mut d_in[s * in_ch * in_plane..(s + 1) * in_ch * in_plane];
        for oc in 0..out_ch {
            let woc = &w[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
            let dwoc = &mut d_w[oc * in_ch * k * k..(oc + 1) * in_ch * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let dy = dys[oc * out_plane + oy * ow + ox];
                    d_b[oc] += dy;
                    for ic in 0..in_ch {
                        let xplane = &xs[ic * in_plane..(ic + 1) * in_plane];
                        let dxplane = &mut dxs[ic * in_plane..(ic + 1) * in_plane];
                        let wic = &woc[ic * k * k..(ic + 1) * k * k];
                        let dwic = &mut dwoc[ic * k * k..(ic + 1) * k * k];
                        for ky in 0..k {
                            let row = (oy * stride + ky) * wd + ox * stride;
                            for kx in 0..k {
                                dwic[ky * k + kx] += dy * xplane[row + kx];
                                dxplane[row + kx] += dy * wic[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), d_in)
}

/// Reverse pass from a logit cotangent. Returns the parameter gradient (same
/// layout as the flat parameter vector) and the input gradient.
pub(crate) fn backward_from_dlogits(
    spec: &ModelSpec,
    params: &ModelParams,
    trace: &Trace,
    d_logits: Tensor,
) -> (Vec<f64>, Tensor) {
    let mut d_params = vec![0.0; spec.param_count];
    let mut d_cur = d_logits;
    for (i, kind) in spec.layers.iter().enumerate().rev() {
        let x = &trace.values[i];
        let block = &spec.blocks[i];
        d_cur = match kind {
            LayerKind::Dense { outputs, .. } => {
                let (w, _) = params.slices(block);
                let (dw, db) = d_params[block.range()].split_at_mut(block.weight_len());
                dense_backward(x, &d_cur, w, *outputs, dw, db)
            }
            LayerKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(d_cur.data())
                    .map(|(&pre, &g)| if pre > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            LayerKind::Flatten => d_cur.reshaped(x.shape().to_vec()).unwrap(),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (w, _) = params.slices(block);
                let (dw, db) = d_params[block.range()].split_at_mut(block.weight_len());
                conv_backward(
                    x,
                    &d_cur,
                    w,
                    *in_channels,
                    *out_channels,
                    *kernel,
                    *stride,
                    dw,
                    db,
                )
            }
        };
    }
    (d_params, d_cur)
}

/// Gradient of the mean batch loss with respect to the flat parameters.
pub fn grad_params(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
) -> Result<Vec<f64>> {
    let (g, _) = grad_params_and_inputs(spec, params, batch)?;
    Ok(g)
}

/// Per-sample input gradients: row `i` is the gradient of sample `i`'s own
/// loss with respect to its input (no batch-mean scaling).
pub fn grad_inputs(spec: &ModelSpec, params: &ModelParams, batch: &LabeledBatch) -> Result<Tensor> {
    let trace = forward_trace(spec, params, &batch.inputs)?;
    let d_logits = ce_dlogits(trace.logits(), &batch.labels)?;
    let (_, d_in) = backward_from_dlogits(spec, params, &trace, d_logits);
    Ok(d_in)
}

/// One reverse pass producing both gradients: the mean-loss parameter
/// gradient and the per-sample input gradients.
pub fn grad_params_and_inputs(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
) -> Result<(Vec<f64>, Tensor)> {
    let trace = forward_trace(spec, params, &batch.inputs)?;
    let d_logits = ce_dlogits(trace.logits(), &batch.labels)?;
    let (mut d_params, d_in) = backward_from_dlogits(spec, params, &trace, d_logits);
    let scale = 1.0 / batch.len() as f64;
    for g in &mut d_params {
        *g *= scale;
    }
    Ok((d_params, d_in))
}

/// Gradient of the summed (not averaged) batch loss with respect to params.
pub fn grad_params_sum(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
) -> Result<Vec<f64>> {
    let trace = forward_trace(spec, params, &batch.inputs)?;
    let d_logits = ce_dlogits(trace.logits(), &batch.labels)?;
    let (d_params, _) = backward_from_dlogits(spec, params, &trace, d_logits);
    Ok(d_params)
}
