//! Feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` so optimizers, Polyak averaging and
//! finite-difference checks can treat a network as a plain parameter vector.
//! Layer `l` occupies `weights (fan_in x fan_out, row-major)` followed by
//! `biases (fan_out)`.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{
    grad_check, max_relative_error, mse_loss, numerical_gradient, relative_error,
    RegressionBatch, REL_ERR_FLOOR,
};
pub use matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArchitecture(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

/// Layer sizes plus activation tags; everything needed to build an [`MlpNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        Self {
            sizes,
            hidden,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output size, got {:?}",
                self.sizes
            )));
        }
        if self.sizes.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer sizes must be positive, got {:?}",
                self.sizes
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// Multilayer perceptron with a hidden activation shared by all hidden layers
/// and a separate output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    arch: Architecture,
    params: Vec<f64>,
    /// `(weight offset, bias offset)` per layer.
    offsets: Vec<(usize, usize)>,
}

/// Post-activation values of every layer, `acts[0]` being the input batch.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.acts[0]
    }
}

/// Gradient with the same flat layout as [`MlpNet`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            data: vec![0.0; net.params.len()],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Batch-mean parameter gradient.
    pub grads: Gradients,
    /// Per-sample gradient with respect to the inputs (not averaged).
    pub input_grad: Matrix,
}

impl MlpNet {
    /// Builds a network with every weight and bias drawn uniformly from
    /// `±1/sqrt(fan_in)` of its layer. Identical `(arch, seed)` give
    /// bitwise-identical parameters.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.num_layers() {
            let fan_in = net.arch.sizes[l];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (w, _) = net.offsets[l];
            let end = w + (fan_in + 1) * net.arch.sizes[l + 1];
            for p in &mut net.params[w..end] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut offsets = Vec::with_capacity(arch.sizes.len() - 1);
        let mut at = 0;
        for w in arch.sizes.windows(2) {
            offsets.push((at, at + w[0] * w[1]));
            at += (w[0] + 1) * w[1];
        }
        Ok(Self {
            params: vec![0.0; at],
            arch,
            offsets,
        })
    }

    pub(crate) fn from_parts(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn sizes(&self) -> &[usize] {
        &self.arch.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.arch.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.sizes.last().expect("validated architecture")
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weights of layer `l`, laid out `fan_in x fan_out` row-major.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b) = self.offsets[l];
        &self.params[w..b]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.offsets[l];
        &mut self.params[w..b]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets[l];
        &self.params[b..b + self.arch.sizes[l + 1]]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.offsets[l];
        let n = self.arch.sizes[l + 1];
        &mut self.params[b..b + n]
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.arch.output
        } else {
            self.arch.hidden
        }
    }

    pub fn same_shape(&self, other: &MlpNet) -> bool {
        self.arch.sizes == other.arch.sizes
    }

    /// Copies `source` parameters into `self`; architectures must match.
    pub fn copy_from(&mut self, source: &MlpNet) -> Result<()> {
        if self.arch != source.arch {
            return Err(Error::Shape(format!(
                "cannot copy {:?} into {:?}",
                source.arch, self.arch
            )));
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in 0..self.num_layers() {
            x = self.layer_forward(l, &x);
        }
        Ok(x)
    }

    /// Forward pass keeping every layer's output for a later [`backward`](Self::backward).
    pub fn trace(&self, input: &Matrix) -> Result<Trace> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.num_layers() + 1);
        acts.push(input.clone());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, &acts[l]);
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &Matrix) -> Matrix {
        let fan_in = self.arch.sizes[l];
        let fan_out = self.arch.sizes[l + 1];
        let w = self.weights(l);
        let bias = self.biases(l);
        let act = self.activation(l);
        let mut out = Matrix::zeros(x.rows(), fan_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let z = out.row_mut(r);
            z.copy_from_slice(bias);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(z, xi, &w[i * fan_out..(i + 1) * fan_out]);
                }
            }
            debug_assert_eq!(xr.len(), fan_in);
            for v in z.iter_mut() {
                *v = act.apply(*v);
            }
        }
        out
    }

    /// Backpropagates per-sample output gradients `upstream` (one row per
    /// sample, `dl_i/dy_i`) through a recorded trace. Parameter gradients are
    /// averaged over the batch; input gradients stay per-sample.
    pub fn backward(&self, trace: &Trace, upstream: &Matrix) -> Result<Backprop> {
        self.backprop(trace, upstream, true)
    }

    /// Input gradient only; skips parameter-gradient accumulation.
    pub fn input_gradient(&self, trace: &Trace, upstream: &Matrix) -> Result<Matrix> {
        Ok(self.backprop(trace, upstream, false)?.input_grad)
    }

    /// Convenience wrapper: forward trace on `inputs`, then backward.
    pub fn gradients(&self, inputs: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let trace = self.trace(inputs)?;
        Ok(self.backward(&trace, upstream)?.grads)
    }

    fn backprop(&self, trace: &Trace, upstream: &Matrix, with_params: bool) -> Result<Backprop> {
        let out = trace.output();
        if trace.acts.len() != self.num_layers() + 1 || trace.input().cols() != self.input_dim() {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, outputs are {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let batch = out.rows();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let fan_in = self.arch.sizes[l];
            let fan_out = self.arch.sizes[l + 1];
            let act = self.activation(l);
            let y = &trace.acts[l + 1];
            let x = &trace.acts[l];

            // delta <- dL/dz
            for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= act.derivative_from_output(yv);
            }

            if with_params {
                let (wo, bo) = self.offsets[l];
                let g = grads.as_mut_slice();
                for r in 0..batch {
                    let dz = delta.row(r);
                    let xr = x.row(r);
                    for (i, &xi) in xr.iter().enumerate() {
                        if xi != 0.0 {
                            axpy(&mut g[wo + i * fan_out..wo + (i + 1) * fan_out], xi, dz);
                        }
                    }
                    for (gb, &d) in g[bo..bo + fan_out].iter_mut().zip(dz) {
                        *gb += d;
                    }
                }
            }

            let w = self.weights(l);
            let mut prev = Matrix::zeros(batch, fan_in);
            for r in 0..batch {
                let dz = delta.row(r);
                let dx = prev.row_mut(r);
                for (i, d) in dx.iter_mut().enumerate() {
                    *d = dot(&w[i * fan_out..(i + 1) * fan_out], dz);
                }
            }
            delta = prev;
        }

        let inv = 1.0 / batch as f64;
        for g in grads.as_mut_slice() {
            *g *= inv;
        }
        Ok(Backprop {
            grads,
            input_grad: delta,
        })
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes
/// while staying deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
