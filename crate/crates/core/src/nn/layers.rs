//! Layer parameter containers and forward primitives. Convolutions are
//! 3x3, stride 1, same padding, with a fused ReLU; dense layers use
//! Leaky ReLU (slope 0.3) or identity activations.

use rand::Rng;

use super::gemm::dgemm;
use super::tensor::Tensor3;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.3;
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::LeakyRelu => {
                if z >= 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative expressed in terms of the activated output (valid because
    /// both supported activations preserve sign).
    #[inline]
    pub fn derivative_from_output(&self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu => {
                if out >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

/// 3x3 convolution parameters. Kernels are stored row-major as
/// `[di][dj][cin][cout]`, matching the im2col column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub cin: usize,
    pub cout: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(cin: usize, cout: usize) -> ConvParams {
        ConvParams {
            cin,
            cout,
            kernels: vec![0.0; KERNEL * KERNEL * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    /// Kaiming-uniform fan-in initialization, zero bias.
    pub fn kaiming(cin: usize, cout: usize, rng: &mut impl Rng) -> ConvParams {
        let mut p = ConvParams::zeros(cin, cout);
        let limit = (6.0 / (KERNEL * KERNEL * cin) as f64).sqrt();
        for w in p.kernels.iter_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }

    #[inline]
    pub fn kernel_at(&self, di: usize, dj: usize, k: usize, c: usize) -> f64 {
        self.kernels[((di * KERNEL + dj) * self.cin + k) * self.cout + c]
    }
}

/// Fully connected layer parameters; weights stored `[din][dout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub din: usize,
    pub dout: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseParams {
    pub fn zeros(din: usize, dout: usize, activation: Activation) -> DenseParams {
        DenseParams {
            din,
            dout,
            weights: vec![0.0; din * dout],
            bias: vec![0.0; dout],
            activation,
        }
    }

    pub fn kaiming(din: usize, dout: usize, activation: Activation, rng: &mut impl Rng) -> DenseParams {
        let mut p = DenseParams::zeros(din, dout, activation);
        let limit = (6.0 / din as f64).sqrt();
        for w in p.weights.iter_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * limit;
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// One layer of the network graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvParams),
    /// 2x2 max pooling with stride 2 (ablation only).
    MaxPool,
    Flatten,
    Dense(DenseParams),
    Dropout(f64),
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(p) => p.param_count(),
            Layer::Dense(p) => p.param_count(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`; inference is the identity.
pub fn dropout(v: &[f64], p: f64, mode: DropoutMode, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::parameter(format!("dropout p {p} outside [0, 1)")));
    }
    match mode {
        DropoutMode::Infer => Ok(v.to_vec()),
        DropoutMode::Train => {
            let mask = dropout_mask(v.len(), p, rng);
            Ok(v.iter().zip(&mask).map(|(x, m)| x * m).collect())
        }
    }
}

/// Multiplicative mask: 0.0 with probability p, else 1/(1-p).
pub(crate) fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep_scale = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

/// im2col for a batch: `x` holds `b` samples of shape h x w x cin
/// (concatenated); the output matrix has `b*h*w` rows and `9*cin` columns,
/// zero padding of one pixel on each spatial side.
pub(crate) fn im2col_batch(
    x: &[f64],
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    out: &mut Vec<f64>,
) {
    let cols = KERNEL * KERNEL * cin;
    out.clear();
    out.resize(b * h * w * cols, 0.0);
    let sample_len = h * w * cin;
    for s in 0..b {
        let xs = &x[s * sample_len..(s + 1) * sample_len];
        let base_row = s * h * w;
        for i in 0..h {
            for (di, ii) in (0..KERNEL).map(|d| (d, i as isize + d as isize - 1)) {
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let ii = ii as usize;
                for dj in 0..KERNEL {
                    // valid j range so that j + dj - 1 is inside [0, w)
                    let j_lo = if dj == 0 { 1 } else { 0 };
                    let j_hi = if dj == 2 { w - 1 } else { w };
                    let col0 = (di * KERNEL + dj) * cin;
                    for j in j_lo..j_hi {
                        let jj = j + dj - 1;
                        let src = (ii * w + jj) * cin;
                        let dst = (base_row + i * w + j) * cols + col0;
                        out[dst..dst + cin].copy_from_slice(&xs[src..src + cin]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_batch`]: scatter-add patch-matrix gradients back to
/// input gradients.
pub(crate) fn col2im_batch(
    cols_grad: &[f64],
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    out: &mut [f64],
) {
    let cols = KERNEL * KERNEL * cin;
    debug_assert_eq!(cols_grad.len(), b * h * w * cols);
    debug_assert_eq!(out.len(), b * h * w * cin);
    out.fill(0.0);
    let sample_len = h * w * cin;
    for s in 0..b {
        let base_row = s * h * w;
        let xs = &mut out[s * sample_len..(s + 1) * sample_len];
        for i in 0..h {
            for (di, ii) in (0..KERNEL).map(|d| (d, i as isize + d as isize - 1)) {
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let ii = ii as usize;
                for dj in 0..KERNEL {
                    let j_lo = if dj == 0 { 1 } else { 0 };
                    let j_hi = if dj == 2 { w - 1 } else { w };
                    let col0 = (di * KERNEL + dj) * cin;
                    for j in j_lo..j_hi {
                        let jj = j + dj - 1;
                        let dst = (ii * w + jj) * cin;
                        let src = (base_row + i * w + j) * cols + col0;
                        for k in 0..cin {
                            xs[dst + k] += cols_grad[src + k];
                        }
                    }
                }
            }
        }
    }
}

/// Batched conv forward from a prebuilt patch matrix: GEMM, bias, ReLU.
/// Returns the post-activation tensor data (`rows x cout`).
pub(crate) fn conv_forward_from_cols(
    cols: &[f64],
    rows: usize,
    params: &ConvParams,
    out: &mut Vec<f64>,
) {
    let k = KERNEL * KERNEL * params.cin;
    out.clear();
    out.resize(rows * params.cout, 0.0);
    dgemm(false, false, rows, k, params.cout, 1.0, cols, &params.kernels, 0.0, out);
    for row in out.chunks_mut(params.cout) {
        for (v, b) in row.iter_mut().zip(&params.bias) {
            let z = *v + b;
            *v = if z > 0.0 { z } else { 0.0 };
        }
    }
}

/// 3x3 same-padding convolution with fused ReLU on a single sample.
pub fn conv2d_forward(x: &Tensor3, params: &ConvParams) -> Result<Tensor3> {
    if x.c != params.cin {
        return Err(Error::contract(format!(
            "conv input channels {} != kernel cin {}",
            x.c, params.cin
        )));
    }
    let mut cols = Vec::new();
    im2col_batch(&x.data, 1, x.h, x.w, x.c, &mut cols);
    let mut out = Vec::new();
    conv_forward_from_cols(&cols, x.h * x.w, params, &mut out);
    Tensor3::from_data(x.h, x.w, params.cout, out)
}

/// Dense layer forward on a single vector.
pub fn dense_forward(v: &[f64], params: &DenseParams) -> Result<Vec<f64>> {
    if v.len() != params.din {
        return Err(Error::contract(format!(
            "dense input length {} != din {}",
            v.len(),
            params.din
        )));
    }
    let mut out = params.bias.clone();
    dgemm(false, false, 1, params.din, params.dout, 1.0, v, &params.weights, 1.0, &mut out);
    for z in out.iter_mut() {
        *z = params.activation.apply(*z);
    }
    Ok(out)
}

/// 2x2 stride-2 max pooling; returns the pooled tensor and the flat input
/// index of each selected maximum (for backward routing).
pub fn maxpool_forward(x: &Tensor3) -> (Tensor3, Vec<usize>) {
    let oh = x.h / 2;
    let ow = x.w / 2;
    let mut out = Tensor3::zeros(oh, ow, x.c);
    let mut argmax = vec![0usize; oh * ow * x.c];
    for i in 0..oh {
        for j in 0..ow {
            for k in 0..x.c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for di in 0..2 {
                    for dj in 0..2 {
                        let idx = ((2 * i + di) * x.w + (2 * j + dj)) * x.c + k;
                        if x.data[idx] > best {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (i * ow + j) * x.c + k;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}
