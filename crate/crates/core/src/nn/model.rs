//! Layer-stack model with exact backpropagation of the mean-squared error.
//!
//! Forward/backward run batched: convolutions go through an im2col patch
//! matrix and a single GEMM per layer, dense layers through one GEMM over
//! the whole batch. Dropout masks are pre-drawn per batch so a paired
//! forward/backward (and any batch split) sees identical masks. All large
//! buffers live in reusable tapes/scratch so steady-state training does not
//! allocate.

use rand_chacha::ChaCha8Rng;

use super::gemm::dgemm;
use super::layers::{
    col2im_batch, conv_forward_from_cols, dropout_mask, im2col_batch, Layer, KERNEL,
};
use super::tensor::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, aligned with `Model::layers`.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { kernels: Vec<f64>, bias: Vec<f64> },
    Dense { weights: Vec<f64>, bias: Vec<f64> },
    None,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        let layers = model
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(p) => LayerGrads::Conv {
                    kernels: vec![0.0; p.kernels.len()],
                    bias: vec![0.0; p.bias.len()],
                },
                Layer::Dense(p) => LayerGrads::Dense {
                    weights: vec![0.0; p.weights.len()],
                    bias: vec![0.0; p.bias.len()],
                },
                _ => LayerGrads::None,
            })
            .collect();
        Gradients { layers }
    }

    /// self *= factor
    pub fn scale(&mut self, factor: f64) {
        self.for_each_slice_mut(|s| {
            for x in s.iter_mut() {
                *x *= factor;
            }
        });
    }

    /// self = other * scale (overwrites, no dependence on previous content)
    pub fn assign_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (
                    LayerGrads::Conv { kernels: ka, bias: ba },
                    LayerGrads::Conv { kernels: kb, bias: bb },
                )
                | (
                    LayerGrads::Dense { weights: ka, bias: ba },
                    LayerGrads::Dense { weights: kb, bias: bb },
                ) => {
                    for (x, y) in ka.iter_mut().zip(kb) {
                        *x = scale * y;
                    }
                    for (x, y) in ba.iter_mut().zip(bb) {
                        *x = scale * y;
                    }
                }
                _ => {}
            }
        }
    }

    /// self += other * scale
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (
                    LayerGrads::Conv { kernels: ka, bias: ba },
                    LayerGrads::Conv { kernels: kb, bias: bb },
                )
                | (
                    LayerGrads::Dense { weights: ka, bias: ba },
                    LayerGrads::Dense { weights: kb, bias: bb },
                ) => {
                    for (x, y) in ka.iter_mut().zip(kb) {
                        *x += scale * y;
                    }
                    for (x, y) in ba.iter_mut().zip(bb) {
                        *x += scale * y;
                    }
                }
                _ => {}
            }
        }
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for l in self.layers.iter_mut() {
            match l {
                LayerGrads::Conv { kernels, bias } | LayerGrads::Dense { weights: kernels, bias } => {
                    f(kernels);
                    f(bias);
                }
                LayerGrads::None => {}
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerGrads::Conv { kernels, bias } | LayerGrads::Dense { weights: kernels, bias } => {
                    out.extend_from_slice(kernels);
                    out.extend_from_slice(bias);
                }
                LayerGrads::None => {}
            }
        }
        out
    }
}

/// Pre-drawn inverted-dropout masks, one entry per dropout layer, each
/// holding `batch * width` factors (sample-major).
#[derive(Debug, Clone, Default)]
pub struct DropoutPlan {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutPlan {
    /// Sub-plan covering samples `from..from+count`.
    pub fn slice(&self, widths: &[usize], from: usize, count: usize) -> DropoutPlan {
        let masks = self
            .masks
            .iter()
            .zip(widths)
            .map(|(m, w)| m[from * w..(from + count) * w].to_vec())
            .collect();
        DropoutPlan { masks }
    }
}

/// Activation tape with reusable buffers. `outputs[0]` is the batch input;
/// `outputs[i+1]` is layer i's output, except Flatten layers which leave an
/// empty marker aliasing their input.
pub struct Tape {
    pub(crate) batch: usize,
    outputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

enum Aux {
    None,
    ConvCols(Vec<f64>),
    PoolArgmax(Vec<usize>),
    DropMask(Vec<f64>),
}

impl Tape {
    /// Resolve the effective activation at position `i` (skipping Flatten
    /// markers backwards).
    fn effective(&self, mut i: usize) -> &[f64] {
        while self.outputs[i].is_empty() && i > 0 {
            i -= 1;
        }
        &self.outputs[i]
    }

    /// Final predictions of the last forward pass (`batch x output_len`).
    pub fn predictions(&self) -> &[f64] {
        self.effective(self.outputs.len() - 1)
    }
}

/// Reusable backward-pass scratch buffers.
#[derive(Default)]
pub struct Scratch {
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    dcols: Vec<f64>,
}

impl Model {
    pub fn new(input_shape: (usize, usize, usize), layers: Vec<Layer>) -> Result<Model> {
        let model = Model { input_shape, layers };
        model.output_shapes()?; // validates wiring
        Ok(model)
    }

    /// Shape after each layer; errors on inconsistent wiring.
    pub fn output_shapes(&self) -> Result<Vec<Shape>> {
        let (h, w, c) = self.input_shape;
        let mut shape = Shape::Spatial { h, w, c };
        let mut out = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (Layer::Conv(p), Shape::Spatial { h, w, c }) => {
                    if c != p.cin {
                        return Err(Error::contract(format!(
                            "layer {idx}: conv cin {} != input channels {c}",
                            p.cin
                        )));
                    }
                    Shape::Spatial { h, w, c: p.cout }
                }
                (Layer::MaxPool, Shape::Spatial { h, w, c }) => Shape::Spatial {
                    h: h / 2,
                    w: w / 2,
                    c,
                },
                (Layer::Flatten, Shape::Spatial { h, w, c }) => Shape::Flat(h * w * c),
                (Layer::Dense(p), Shape::Flat(n)) => {
                    if n != p.din {
                        return Err(Error::contract(format!(
                            "layer {idx}: dense din {} != input width {n}",
                            p.din
                        )));
                    }
                    Shape::Flat(p.dout)
                }
                (Layer::Dropout(p), Shape::Flat(n)) => {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::parameter(format!("dropout p {p} outside [0, 1)")));
                    }
                    Shape::Flat(n)
                }
                (l, s) => {
                    return Err(Error::contract(format!(
                        "layer {idx}: {l:?} cannot follow shape {s:?}"
                    )))
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_len(&self) -> usize {
        self.output_shapes()
            .map(|s| s.last().map(|v| v.len()).unwrap_or(0))
            .unwrap_or(0)
    }

    /// Total trainable parameter count (conv: 9*cin*cout + cout; dense:
    /// din*dout + dout).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Widths of dropout layers in order (for mask plans).
    pub fn dropout_widths(&self) -> Vec<usize> {
        let shapes = self.output_shapes().expect("validated at construction");
        self.layers
            .iter()
            .zip(&shapes)
            .filter_map(|(l, s)| matches!(l, Layer::Dropout(_)).then(|| s.len()))
            .collect()
    }

    /// Draw a train-mode dropout plan for a batch of `b` samples.
    pub fn draw_dropout_plan(&self, b: usize, rng: &mut ChaCha8Rng) -> DropoutPlan {
        let shapes = self.output_shapes().expect("validated at construction");
        let mut masks = Vec::new();
        for (l, s) in self.layers.iter().zip(&shapes) {
            if let Layer::Dropout(p) = l {
                masks.push(dropout_mask(b * s.len(), *p, rng));
            }
        }
        DropoutPlan { masks }
    }

    pub fn new_tape(&self) -> Tape {
        let aux = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(_) => Aux::ConvCols(Vec::new()),
                Layer::MaxPool => Aux::PoolArgmax(Vec::new()),
                Layer::Dropout(_) => Aux::DropMask(Vec::new()),
                _ => Aux::None,
            })
            .collect();
        Tape {
            batch: 0,
            outputs: vec![Vec::new(); self.layers.len() + 1],
            aux,
        }
    }

    pub fn new_scratch(&self) -> Scratch {
        Scratch::default()
    }

    /// Batched forward pass into a reusable tape. `plan` supplies train-mode
    /// dropout masks; `None` runs dropout as identity (inference).
    pub(crate) fn forward_into(
        &self,
        x: &[f64],
        b: usize,
        plan: Option<&DropoutPlan>,
        tape: &mut Tape,
    ) -> Result<()> {
        let (h, w, c) = self.input_shape;
        if x.len() != b * h * w * c {
            return Err(Error::contract(format!(
                "input length {} != batch {b} x {h}x{w}x{c}",
                x.len()
            )));
        }
        tape.batch = b;
        tape.outputs[0].clear();
        tape.outputs[0].extend_from_slice(x);
        let mut shape = Shape::Spatial { h, w, c };
        let mut drop_idx = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            // split_at_mut so we can read the input while writing the output
            let (head, rest) = tape.outputs.split_at_mut(idx + 1);
            let mut src = idx;
            while head[src].is_empty() && src > 0 {
                src -= 1;
            }
            let input = &head[src];
            let out = &mut rest[0];
            match (layer, shape) {
                (Layer::Conv(p), Shape::Spatial { h, w, .. }) => {
                    let cols = match &mut tape.aux[idx] {
                        Aux::ConvCols(c) => c,
                        _ => unreachable!(),
                    };
                    im2col_batch(input, b, h, w, p.cin, cols);
                    conv_forward_from_cols(cols, b * h * w, p, out);
                    shape = Shape::Spatial { h, w, c: p.cout };
                }
                (Layer::MaxPool, Shape::Spatial { h, w, c }) => {
                    let argmax = match &mut tape.aux[idx] {
                        Aux::PoolArgmax(a) => a,
                        _ => unreachable!(),
                    };
                    pool_batch_into(input, b, h, w, c, out, argmax);
                    shape = Shape::Spatial { h: h / 2, w: w / 2, c };
                }
                (Layer::Flatten, Shape::Spatial { h, w, c }) => {
                    out.clear(); // empty marker: aliases the previous output
                    shape = Shape::Flat(h * w * c);
                }
                (Layer::Dense(p), Shape::Flat(_)) => {
                    out.clear();
                    out.resize(b * p.dout, 0.0);
                    for row in out.chunks_mut(p.dout) {
                        row.copy_from_slice(&p.bias);
                    }
                    dgemm(false, false, b, p.din, p.dout, 1.0, input, &p.weights, 1.0, out);
                    for z in out.iter_mut() {
                        *z = p.activation.apply(*z);
                    }
                    shape = Shape::Flat(p.dout);
                }
                (Layer::Dropout(_), Shape::Flat(n)) => {
                    match plan {
                        Some(plan) => {
                            let mask = &plan.masks[drop_idx];
                            debug_assert_eq!(mask.len(), b * n);
                            out.clear();
                            out.extend(input.iter().zip(mask).map(|(v, m)| v * m));
                            if let Aux::DropMask(m) = &mut tape.aux[idx] {
                                m.clear();
                                m.extend_from_slice(mask);
                            }
                        }
                        None => {
                            out.clear(); // identity: alias like Flatten
                            if let Aux::DropMask(m) = &mut tape.aux[idx] {
                                m.clear();
                            }
                        }
                    }
                    drop_idx += 1;
                }
                _ => unreachable!("validated at construction"),
            }
        }
        let pred = tape.predictions();
        if pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "non-finite activation in forward pass".to_string(),
            ));
        }
        Ok(())
    }

    /// Mean-squared-error loss and exact parameter gradients over the batch
    /// recorded in `tape`. Gradients are of the mean-reduced loss (mean over
    /// batch and output positions) and overwrite `grads`.
    pub(crate) fn backward_into(
        &self,
        tape: &Tape,
        targets: &[f64],
        grads: &mut Gradients,
        scratch: &mut Scratch,
    ) -> f64 {
        let b = tape.batch;
        let out_len = self.output_len();
        debug_assert_eq!(targets.len(), b * out_len);
        let shapes = self.output_shapes().expect("validated");
        let pred = tape.predictions();
        let denom = (b * out_len) as f64;
        let mut loss = 0.0;
        scratch.grad_a.clear();
        scratch
            .grad_a
            .extend(pred.iter().zip(targets).map(|(p, y)| {
                let e = p - y;
                loss += e * e;
                2.0 * e / denom
            }));
        loss /= denom;

        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let input = tape.effective(idx);
            let in_shape = if idx == 0 {
                let (h, w, c) = self.input_shape;
                Shape::Spatial { h, w, c }
            } else {
                shapes[idx - 1]
            };
            match layer {
                Layer::Dense(p) => {
                    let out = tape.effective(idx + 1);
                    let dz = &mut scratch.grad_a;
                    for (g, o) in dz.iter_mut().zip(out) {
                        *g *= p.activation.derivative_from_output(*o);
                    }
                    let (dw, db) = match &mut grads.layers[idx] {
                        LayerGrads::Dense { weights, bias } => (weights, bias),
                        _ => unreachable!(),
                    };
                    dgemm(true, false, p.din, b, p.dout, 1.0, input, dz, 0.0, dw);
                    db.fill(0.0);
                    for row in dz.chunks(p.dout) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    let dx = &mut scratch.grad_b;
                    dx.clear();
                    dx.resize(b * p.din, 0.0);
                    dgemm(false, true, b, p.dout, p.din, 1.0, dz, &p.weights, 0.0, dx);
                    std::mem::swap(&mut scratch.grad_a, &mut scratch.grad_b);
                }
                Layer::Conv(p) => {
                    let out = tape.effective(idx + 1);
                    let (h, w) = match in_shape {
                        Shape::Spatial { h, w, .. } => (h, w),
                        _ => unreachable!(),
                    };
                    let rows = b * h * w;
                    let dz = &mut scratch.grad_a;
                    for (g, o) in dz.iter_mut().zip(out) {
                        if *o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    let cols = match &tape.aux[idx] {
                        Aux::ConvCols(c) => c,
                        _ => unreachable!(),
                    };
                    let k = KERNEL * KERNEL * p.cin;
                    let (dk, db) = match &mut grads.layers[idx] {
                        LayerGrads::Conv { kernels, bias } => (kernels, bias),
                        _ => unreachable!(),
                    };
                    dgemm(true, false, k, rows, p.cout, 1.0, cols, dz, 0.0, dk);
                    db.fill(0.0);
                    for row in dz.chunks(p.cout) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    scratch.dcols.clear();
                    scratch.dcols.resize(rows * k, 0.0);
                    dgemm(false, true, rows, p.cout, k, 1.0, dz, &p.kernels, 0.0, &mut scratch.dcols);
                    let dx = &mut scratch.grad_b;
                    dx.clear();
                    dx.resize(b * h * w * p.cin, 0.0);
                    col2im_batch(&scratch.dcols, b, h, w, p.cin, dx);
                    std::mem::swap(&mut scratch.grad_a, &mut scratch.grad_b);
                }
                Layer::MaxPool => {
                    let argmax = match &tape.aux[idx] {
                        Aux::PoolArgmax(a) => a,
                        _ => unreachable!(),
                    };
                    let dx = &mut scratch.grad_b;
                    dx.clear();
                    dx.resize(input.len(), 0.0);
                    for (o, &src) in scratch.grad_a.iter().zip(argmax) {
                        dx[src] += o;
                    }
                    std::mem::swap(&mut scratch.grad_a, &mut scratch.grad_b);
                }
                Layer::Flatten => {}
                Layer::Dropout(_) => {
                    if let Aux::DropMask(mask) = &tape.aux[idx] {
                        if !mask.is_empty() {
                            for (g, m) in scratch.grad_a.iter_mut().zip(mask) {
                                *g *= m;
                            }
                        }
                    }
                }
            }
        }
        loss
    }

    /// Batched inference (dropout in infer mode). Returns `b x output_len`.
    pub fn forward_batch(&self, x: &[f64], b: usize) -> Result<Vec<f64>> {
        let mut tape = self.new_tape();
        self.forward_into(x, b, None, &mut tape)?;
        Ok(tape.predictions().to_vec())
    }

    /// Exact gradients of MSE(model(x), y) for a single sample. A supplied
    /// plan fixes the dropout masks for the paired forward/backward; with
    /// `None` dropout runs in infer mode.
    pub fn backward(
        &self,
        x: &Tensor3,
        y: &[f64],
        plan: Option<&DropoutPlan>,
    ) -> Result<(f64, Gradients)> {
        if y.len() != self.output_len() {
            return Err(Error::contract(format!(
                "target length {} != model output {}",
                y.len(),
                self.output_len()
            )));
        }
        let mut tape = self.new_tape();
        self.forward_into(&x.data, 1, plan, &mut tape)?;
        let mut grads = Gradients::zeros_like(self);
        let mut scratch = self.new_scratch();
        let loss = self.backward_into(&tape, y, &mut grads, &mut scratch);
        Ok((loss, grads))
    }

    /// Single-sample inference (dropout in infer mode).
    pub fn predict_one(&self, x: &Tensor3) -> Result<Vec<f64>> {
        self.forward_batch(&x.data, 1)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => {
                    out.extend_from_slice(&p.kernels);
                    out.extend_from_slice(&p.bias);
                }
                Layer::Dense(p) => {
                    out.extend_from_slice(&p.weights);
                    out.extend_from_slice(&p.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "flat parameter length {} != model parameter count {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0usize;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(p) => {
                    let kn = p.kernels.len();
                    p.kernels.copy_from_slice(&flat[at..at + kn]);
                    at += kn;
                    let bn = p.bias.len();
                    p.bias.copy_from_slice(&flat[at..at + bn]);
                    at += bn;
                }
                Layer::Dense(p) => {
                    let wn = p.weights.len();
                    p.weights.copy_from_slice(&flat[at..at + wn]);
                    at += wn;
                    let bn = p.bias.len();
                    p.bias.copy_from_slice(&flat[at..at + bn]);
                    at += bn;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Batched 2x2/stride-2 max pool over flat sample-major data into reusable
/// buffers. Argmax holds flat indices into the input array.
fn pool_batch_into(
    x: &[f64],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    out: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    let (oh, ow) = (h / 2, w / 2);
    out.clear();
    out.resize(b * oh * ow * c, 0.0);
    argmax.clear();
    argmax.resize(out.len(), 0);
    let in_sample = h * w * c;
    let out_sample = oh * ow * c;
    for s in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for k in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let idx = s * in_sample + ((2 * i + di) * w + (2 * j + dj)) * c + k;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = s * out_sample + (i * ow + j) * c + k;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, ConvParams, DenseParams};
    use rand::{Rng, SeedableRng};

    fn tiny_model(rng: &mut ChaCha8Rng, pool: bool) -> Model {
        let mut layers = vec![Layer::Conv(ConvParams::kaiming(2, 2, rng))];
        let spatial = if pool {
            layers.push(Layer::MaxPool);
            2 * 2 * 2
        } else {
            4 * 4 * 2
        };
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(DenseParams::kaiming(
            spatial,
            4,
            Activation::Identity,
            rng,
        )));
        Model::new((4, 4, 2), layers).unwrap()
    }

    #[test]
    fn zero_model_gradients_flow_through_output_bias_only() {
        let model = Model::new(
            (2, 2, 1),
            vec![
                Layer::Flatten,
                Layer::Dense(DenseParams::zeros(4, 3, Activation::Identity)),
            ],
        )
        .unwrap();
        let x = Tensor3::zeros(2, 2, 1);
        let y = vec![0.0, 0.0, 0.0];
        let (loss, grads) = model.backward(&x, &y, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));

        let y2 = vec![1.0, 2.0, 3.0];
        let (_, grads2) = model.backward(&x, &y2, None).unwrap();
        if let LayerGrads::Dense { weights, bias } = &grads2.layers[1] {
            assert!(weights.iter().all(|&g| g == 0.0));
            assert!(bias.iter().any(|&g| g != 0.0));
        } else {
            panic!("expected dense grads");
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool = seed % 2 == 1;
            let mut model = tiny_model(&mut rng, pool);
            let x = Tensor3::from_data(
                4,
                4,
                2,
                (0..32).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            )
            .unwrap();
            let y: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let (_, grads) = model.backward(&x, &y, None).unwrap();
            let analytic = grads.flat();
            let mut flat = model.flat_params();
            let h = 1e-4;
            let mut max_rel = 0.0f64;
            for i in 0..flat.len() {
                let orig = flat[i];
                flat[i] = orig + h;
                model.set_flat_params(&flat).unwrap();
                let (lp, _) = model.backward(&x, &y, None).unwrap();
                flat[i] = orig - h;
                model.set_flat_params(&flat).unwrap();
                let (lm, _) = model.backward(&x, &y, None).unwrap();
                flat[i] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
            }
            model.set_flat_params(&flat).unwrap();
            assert!(
                max_rel < 1e-4,
                "seed {seed} pool {pool}: max relative error {max_rel}"
            );
        }
    }

    #[test]
    fn finite_differences_agree_with_fixed_dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = Model::new(
            (2, 2, 1),
            vec![
                Layer::Flatten,
                Layer::Dense(DenseParams::kaiming(4, 6, Activation::LeakyRelu, &mut rng)),
                Layer::Dropout(0.4),
                Layer::Dense(DenseParams::kaiming(6, 2, Activation::Identity, &mut rng)),
            ],
        )
        .unwrap();
        let x = Tensor3::from_data(2, 2, 1, vec![0.3, -0.8, 1.2, 0.5]).unwrap();
        let y = vec![0.2, -0.4];
        let plan = model.draw_dropout_plan(1, &mut rng);
        let (_, grads) = model.backward(&x, &y, Some(&plan)).unwrap();
        let analytic = grads.flat();
        let mut flat = model.flat_params();
        let h = 1e-5;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            model.set_flat_params(&flat).unwrap();
            let (lp, _) = model.backward(&x, &y, Some(&plan)).unwrap();
            flat[i] = orig - h;
            model.set_flat_params(&flat).unwrap();
            let (lm, _) = model.backward(&x, &y, Some(&plan)).unwrap();
            flat[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((analytic[i] - numeric).abs() / denom) < 1e-4,
                "param {i}: {} vs {numeric}",
                analytic[i]
            );
        }
        model.set_flat_params(&flat).unwrap();
    }

    #[test]
    fn duplicated_batch_equals_single_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = tiny_model(&mut rng, false);
        let x = Tensor3::from_data(4, 4, 2, (0..32).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let (l1, g1) = model.backward(&x, &y, None).unwrap();

        let mut xx = x.data.clone();
        xx.extend_from_slice(&x.data);
        let mut yy = y.clone();
        yy.extend_from_slice(&y);
        let mut tape = model.new_tape();
        model.forward_into(&xx, 2, None, &mut tape).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        let mut scratch = model.new_scratch();
        let l2 = model.backward_into(&tape, &yy, &mut grads, &mut scratch);
        assert!((l1 - l2).abs() < 1e-12);
        let f1 = g1.flat();
        let f2 = grads.flat();
        for i in 0..f1.len() {
            assert!((f1[i] - f2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_reuse_gives_identical_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = tiny_model(&mut rng, true);
        let mut tape = model.new_tape();
        let mut grads = Gradients::zeros_like(&model);
        let mut scratch = model.new_scratch();
        let mut previous: Option<(f64, Vec<f64>)> = None;
        for round in 0..3 {
            let x: Vec<f64> = (0..64).map(|i| ((i * 31 + 7) % 13) as f64 * 0.1).collect();
            let y: Vec<f64> = (0..8).map(|i| i as f64 * 0.25).collect();
            model.forward_into(&x, 2, None, &mut tape).unwrap();
            let loss = model.backward_into(&tape, &y, &mut grads, &mut scratch);
            let flat = grads.flat();
            if let Some((pl, pf)) = &previous {
                assert_eq!(loss, *pl, "round {round}");
                assert_eq!(&flat, pf, "round {round}");
            }
            previous = Some((loss, flat));
        }
    }

    #[test]
    fn loss_non_increasing_under_small_step_full_batch_descent() {
        // convex head: dense-only model, identity activation
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Model::new(
            (1, 1, 6),
            vec![
                Layer::Flatten,
                Layer::Dense(DenseParams::kaiming(6, 3, Activation::Identity, &mut rng)),
            ],
        )
        .unwrap();
        let x = Tensor3::from_data(1, 1, 6, (0..6).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let (loss, grads) = model.backward(&x, &y, None).unwrap();
            assert!(loss <= last + 1e-12, "loss increased: {loss} > {last}");
            last = loss;
            let flat_g = grads.flat();
            let mut flat_p = model.flat_params();
            for (p, g) in flat_p.iter_mut().zip(&flat_g) {
                *p -= 0.05 * g;
            }
            model.set_flat_params(&flat_p).unwrap();
        }
    }

    #[test]
    fn pooling_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::new(
            (8, 8, 1),
            vec![
                Layer::Conv(ConvParams::kaiming(1, 2, &mut rng)),
                Layer::MaxPool,
                Layer::Conv(ConvParams::kaiming(2, 3, &mut rng)),
                Layer::MaxPool,
                Layer::Flatten,
                Layer::Dense(DenseParams::kaiming(2 * 2 * 3, 2, Activation::Identity, &mut rng)),
            ],
        )
        .unwrap();
        let shapes = model.output_shapes().unwrap();
        assert_eq!(shapes[1], Shape::Spatial { h: 4, w: 4, c: 2 });
        assert_eq!(shapes[3], Shape::Spatial { h: 2, w: 2, c: 3 });
    }

    #[test]
    fn forward_batch_matches_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = tiny_model(&mut rng, true);
        let xs: Vec<Tensor3> = (0..5)
            .map(|_| {
                Tensor3::from_data(4, 4, 2, (0..32).map(|_| rng.random::<f64>()).collect()).unwrap()
            })
            .collect();
        let mut flat = Vec::new();
        for t in &xs {
            flat.extend_from_slice(&t.data);
        }
        let batched = model.forward_batch(&flat, 5).unwrap();
        for (i, t) in xs.iter().enumerate() {
            let single = model.predict_one(t).unwrap();
            for j in 0..4 {
                assert!((batched[i * 4 + j] - single[j]).abs() < 1e-12);
            }
        }
    }
}
