//! Minimal dense/conv1d network engine with exact analytic gradients.
//!
//! The engine is deliberately small: two layer kinds, four activations,
//! flat `f64` parameter storage, and a hand-written backward pass. Every
//! trainable module in the crate sits on top of it, and all gradients are
//! checked against central finite differences in the test suite.
//!
//! Layouts:
//! - dense: weights `(out_dim, in_dim)` row-major, then biases `(out_dim)`.
//!   Forward maps a `batch x in_dim` matrix to `batch x out_dim`.
//! - conv1d: weights `(out_dim, in_dim, kernel)`, then biases `(out_dim)`.
//!   Rows are time steps; zero padding keeps the temporal length.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_network, read_network, save_network, write_network, CheckpointMeta};
pub use loss::{
    binary_cross_entropy, binary_cross_entropy_grad, clamp_prob, cross_entropy, PROB_EPS,
};

use crate::error::{PtalError, Result};
use crate::mat::{axpy, dot, Matrix};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    /// Row-wise softmax; only permitted on the final layer.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Dense,
    /// 1D convolution along rows (time), `kernel` odd.
    Conv1d { kernel: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Frozen layers keep zero parameter gradients while still passing
    /// input gradients through.
    pub trainable: bool,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_dim,
            out_dim,
            activation,
            trainable: true,
        }
    }

    pub fn conv1d(in_dim: usize, out_dim: usize, kernel: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1d { kernel },
            in_dim,
            out_dim,
            activation,
            trainable: true,
        }
    }

    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_dim * self.out_dim,
            LayerKind::Conv1d { kernel } => self.in_dim * self.out_dim * kernel,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_dim
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(PtalError::Config("layer dims must be >= 1".into()));
        }
        if let LayerKind::Conv1d { kernel } = self.kind {
            if kernel == 0 || kernel % 2 == 0 {
                return Err(PtalError::Config(format!(
                    "conv1d kernel must be odd and >= 1, got {kernel}"
                )));
            }
        }
        Ok(())
    }
}

/// A feed-forward stack of layers with flat parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    rng_seed: u64,
}

impl Network {
    /// Builds a network with uniform `+-sqrt(6/(fan_in+fan_out))` weights
    /// and uniform `+-1/sqrt(fan_in)` biases, drawn from a seeded RNG.
    pub fn new(layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(PtalError::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(PtalError::Config(
                    "softmax is only permitted on the final layer".into(),
                ));
            }
            if i > 0 && layers[i - 1].out_dim != l.in_dim {
                return Err(PtalError::Config(format!(
                    "layer {i} expects in_dim {} but previous out_dim is {}",
                    l.in_dim,
                    layers[i - 1].out_dim
                )));
            }
        }
        let mut rng = StdRng::seed_from_u64(rng_seed);
        let mut params = Vec::new();
        for l in &layers {
            let (fan_in, fan_out) = match l.kind {
                LayerKind::Dense => (l.in_dim, l.out_dim),
                LayerKind::Conv1d { kernel } => (l.in_dim * kernel, l.out_dim * kernel),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..l.weight_count() {
                params.push(rng.random_range(-limit..limit));
            }
            // Spread bias kinks across the input range instead of stacking
            // them at the origin.
            let b_limit = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..l.out_dim {
                params.push(rng.random_range(-b_limit..b_limit));
            }
        }
        Ok(Network {
            layers,
            params,
            rng_seed,
        })
    }

    /// Rebuilds a network from explicit specs and parameters (checkpoint path).
    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<f64>, rng_seed: u64) -> Result<Self> {
        let expected: usize = layers.iter().map(|l| l.param_count()).sum();
        if params.len() != expected {
            return Err(PtalError::Dimension(format!(
                "param vector has {} entries, layer specs require {expected}",
                params.len()
            )));
        }
        let net = Network {
            layers,
            params,
            rng_seed,
        };
        for (i, l) in net.layers.iter().enumerate() {
            l.validate()?;
            if l.activation == Activation::Softmax && i + 1 != net.layers.len() {
                return Err(PtalError::Config(
                    "softmax is only permitted on the final layer".into(),
                ));
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Flat parameter range occupied by layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start: usize = self.layers[..l].iter().map(|s| s.param_count()).sum();
        start..start + self.layers[l].param_count()
    }

    /// Marks every layer non-trainable.
    pub fn freeze(&mut self) {
        for l in &mut self.layers {
            l.trainable = false;
        }
    }

    pub fn set_trainable(&mut self, layer: usize, trainable: bool) {
        self.layers[layer].trainable = trainable;
    }

    pub fn is_frozen(&self) -> bool {
        self.layers.iter().all(|l| !l.trainable)
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut trace = self.forward_trace(input)?;
        Ok(trace.pop().unwrap())
    }

    /// Runs forward and keeps every intermediate activation;
    /// `trace[0]` is the input, `trace[layers.len()]` the output.
    pub fn forward_trace(&self, input: &Matrix) -> Result<Vec<Matrix>> {
        if input.cols() != self.layers[0].in_dim {
            return Err(PtalError::Dimension(format!(
                "input has {} columns, first layer expects {}",
                input.cols(),
                self.layers[0].in_dim
            )));
        }
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(input.clone());
        let mut offset = 0;
        for spec in &self.layers {
            let w = &self.params[offset..offset + spec.weight_count()];
            let b = &self.params[offset + spec.weight_count()..offset + spec.param_count()];
            offset += spec.param_count();
            let x = trace.last().unwrap();
            let mut y = match spec.kind {
                LayerKind::Dense => dense_forward(x, w, b, spec),
                LayerKind::Conv1d { kernel } => conv1d_forward(x, w, b, spec, kernel),
            };
            apply_activation(spec.activation, &mut y);
            trace.push(y);
        }
        Ok(trace)
    }

    /// Backpropagates `upstream` (gradient of some scalar loss w.r.t. the
    /// network output) and returns `(param_grads, input_grad)`. Frozen
    /// layers get zero parameter gradients but still propagate input
    /// gradients.
    pub fn backward(&self, input: &Matrix, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let trace = self.forward_trace(input)?;
        self.backward_from_trace(&trace, upstream)
    }

    /// Same as [`Network::backward`] but reuses an existing forward trace.
    pub fn backward_from_trace(
        &self,
        trace: &[Matrix],
        upstream: &Matrix,
    ) -> Result<(Vec<f64>, Matrix)> {
        let mut grads = vec![0.0; self.params.len()];
        let gx = self.backward_into(trace, upstream, &mut grads)?;
        Ok((grads, gx))
    }

    /// Backward pass accumulating parameter gradients into a caller-owned
    /// buffer (zeroed here), for allocation-free training loops.
    pub fn backward_into(
        &self,
        trace: &[Matrix],
        upstream: &Matrix,
        grads: &mut [f64],
    ) -> Result<Matrix> {
        let out = trace.last().unwrap();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(PtalError::Dimension(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(PtalError::Dimension(format!(
                "grad buffer has {} entries, network has {} params",
                grads.len(),
                self.params.len()
            )));
        }
        grads.fill(0.0);
        let mut g = upstream.clone();
        let mut offset = self.params.len();
        for (l, spec) in self.layers.iter().enumerate().rev() {
            offset -= spec.param_count();
            let x = &trace[l];
            let y = &trace[l + 1];
            activation_backward_inplace(spec.activation, y, &mut g);
            let w = &self.params[offset..offset + spec.weight_count()];
            let (wg, bg) = grads[offset..offset + spec.param_count()]
                .split_at_mut(spec.weight_count());
            g = match spec.kind {
                LayerKind::Dense => dense_backward(x, w, spec, &g, wg, bg, spec.trainable),
                LayerKind::Conv1d { kernel } => {
                    conv1d_backward(x, w, spec, kernel, &g, wg, bg, spec.trainable)
                }
            };
        }
        Ok(g)
    }
}

fn dense_forward(x: &Matrix, w: &[f64], b: &[f64], spec: &LayerSpec) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), spec.out_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        for o in 0..spec.out_dim {
            yr[o] = dot(xr, &w[o * spec.in_dim..(o + 1) * spec.in_dim]) + b[o];
        }
    }
    y
}

fn dense_backward(
    x: &Matrix,
    w: &[f64],
    spec: &LayerSpec,
    g_pre: &Matrix,
    wg: &mut [f64],
    bg: &mut [f64],
    trainable: bool,
) -> Matrix {
    let mut gx = Matrix::zeros(x.rows(), spec.in_dim);
    for r in 0..x.rows() {
        let gr = g_pre.row(r);
        let xr = x.row(r);
        let gxr = gx.row_mut(r);
        for o in 0..spec.out_dim {
            let go = gr[o];
            if go == 0.0 {
                continue;
            }
            let wrow = &w[o * spec.in_dim..(o + 1) * spec.in_dim];
            axpy(gxr, go, wrow);
            if trainable {
                axpy(&mut wg[o * spec.in_dim..(o + 1) * spec.in_dim], go, xr);
                bg[o] += go;
            }
        }
    }
    gx
}

fn conv1d_forward(x: &Matrix, w: &[f64], b: &[f64], spec: &LayerSpec, kernel: usize) -> Matrix {
    let t_len = x.rows();
    let reach = (kernel / 2) as isize;
    let mut y = Matrix::zeros(t_len, spec.out_dim);
    for t in 0..t_len {
        let yr = y.row_mut(t);
        for (k, xi) in (-reach..=reach).enumerate() {
            let s = t as isize + xi;
            if s < 0 || s >= t_len as isize {
                continue; // zero padding
            }
            let xr = x.row(s as usize);
            for o in 0..spec.out_dim {
                let wrow = &w[(o * spec.in_dim) * kernel..];
                let mut acc = 0.0;
                for (i, xv) in xr.iter().enumerate() {
                    acc += wrow[i * kernel + k] * xv;
                }
                yr[o] += acc;
            }
        }
        for o in 0..spec.out_dim {
            yr[o] += b[o];
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &Matrix,
    w: &[f64],
    spec: &LayerSpec,
    kernel: usize,
    g_pre: &Matrix,
    wg: &mut [f64],
    bg: &mut [f64],
    trainable: bool,
) -> Matrix {
    let t_len = x.rows();
    let reach = (kernel / 2) as isize;
    let mut gx = Matrix::zeros(t_len, spec.in_dim);
    for t in 0..t_len {
        let gr = g_pre.row(t);
        for (k, xi) in (-reach..=reach).enumerate() {
            let s = t as isize + xi;
            if s < 0 || s >= t_len as isize {
                continue;
            }
            let s = s as usize;
            for o in 0..spec.out_dim {
                let go = gr[o];
                if go == 0.0 {
                    continue;
                }
                let wbase = (o * spec.in_dim) * kernel;
                let gxr = gx.row_mut(s);
                for i in 0..spec.in_dim {
                    gxr[i] += go * w[wbase + i * kernel + k];
                }
                if trainable {
                    let xr = x.row(s);
                    for i in 0..spec.in_dim {
                        wg[wbase + i * kernel + k] += go * xr[i];
                    }
                }
            }
        }
        if trainable {
            for o in 0..spec.out_dim {
                bg[o] += gr[o];
            }
        }
    }
    gx
}

fn apply_activation(act: Activation, y: &mut Matrix) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for v in y.data_mut() {
                *v = sigmoid(*v);
            }
        }
        Activation::Softmax => {
            for r in 0..y.rows() {
                softmax_row(y.row_mut(r));
            }
        }
    }
}

/// Maps the gradient w.r.t. the post-activation output `y` back to the
/// pre-activation gradient, in place. All four activations are invertible
/// through their outputs, so no pre-activation cache is needed.
fn activation_backward_inplace(act: Activation, y: &Matrix, g: &mut Matrix) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                if *yv <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (gv, yv) in g.data_mut().iter_mut().zip(y.data()) {
                *gv *= yv * (1.0 - yv);
            }
        }
        Activation::Softmax => {
            for r in 0..g.rows() {
                let s = y.row(r);
                let inner = dot(s, g.row(r));
                let gr = g.row_mut(r);
                for c in 0..s.len() {
                    gr[c] = s[c] * (gr[c] - inner);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
