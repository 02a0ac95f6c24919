//! Fully connected SiLU networks with exact reverse-mode gradients and Adam.
//!
//! Parameter layout is fixed: for each layer in order, the weight matrix
//! `[out × in]` row-major followed by the bias `[out]`. Batched passes go
//! through `matrixmultiply::dgemm`; with no threading the reduction order is
//! fixed, so results are reproducible within a build.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::math::{self, sigmoid, sqrt};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    SiLU,
    /// Linear hidden layers; only used to build analytic test networks.
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::SiLU => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        let spec = NetSpec { input_dim, output_dim, hidden, activation: Activation::SiLU };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("network input and output dims must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("network needs at least one hidden layer of positive width"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub values: Vec<f64>,
}

impl Params {
    pub fn zeros(spec: &NetSpec) -> Self {
        Params { values: vec![0.0; spec.param_count()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Round to `f32` so that checkpoints round-trip exactly.
    pub fn round_to_f32(&mut self) {
        math::round_f32(&mut self.values);
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init(spec: &NetSpec, seed: u64) -> Params {
    let mut rng = math::rng(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let bound = sqrt(6.0 / (fan_in + fan_out) as f64);
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
        values.extend(core::iter::repeat_n(0.0, fan_out));
    }
    Params { values }
}

/// `c[m×n] = beta·c + a[m×k] · b` where `b` is given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(c.len() >= m * n);
    assert!(k == 0 || (last(m, k, rsa, csa) < a.len() as isize && last(k, n, rsb, csb) < b.len() as isize));
    // SAFETY: every strided index dgemm touches is in bounds per the asserts above
    #[allow(unsafe_code)]
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// A network: spec plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: Params,
}

/// Cached activations of a batched forward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    batch: usize,
    /// Layer inputs: `inputs[0]` is the network input, `inputs[l]` the post-activation of layer `l-1`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = init(&spec, seed);
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: NetSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        check_dim(spec.param_count(), params.len())?;
        Ok(Mlp { spec, params })
    }

    /// Forward a row-major batch `[batch × input_dim]`, keeping what backward needs.
    pub fn forward_batch(&self, input: &[f64], batch: usize, tape: &mut Tape) -> Result<Vec<f64>> {
        check_dim(batch * self.spec.input_dim, input.len())?;
        let layers = self.spec.layers();
        tape.batch = batch;
        tape.inputs.clear();
        tape.pre.clear();
        tape.inputs.push(input.to_vec());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params.values[offset..offset + fan_in * fan_out];
            let b = &self.params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            let x = tape.inputs.last().expect("input pushed");
            // z += x · Wᵀ
            gemm(batch, fan_in, fan_out, x, fan_in as isize, 1, w, 1, fan_in as isize, 1.0, &mut z);
            if l + 1 < layers.len() {
                let a = z.iter().map(|&v| self.spec.activation.apply(v)).collect();
                tape.pre.push(z);
                tape.inputs.push(a);
            } else {
                tape.pre.push(z.clone());
                return Ok(z);
            }
        }
        unreachable!("network has an output layer")
    }

    /// Backward pass for `⟨upstream, output⟩`. Parameter gradients are
    /// accumulated into `param_grads` (summed over the batch); input gradients
    /// are returned when requested.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        upstream: &[f64],
        param_grads: Option<&mut [f64]>,
        want_input_grads: bool,
    ) -> Result<Option<Vec<f64>>> {
        let batch = tape.batch;
        check_dim(batch * self.spec.output_dim, upstream.len())?;
        if let Some(g) = &param_grads {
            check_dim(self.params.len(), g.len())?;
        }
        let layers = self.spec.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += i * o + o;
        }
        let mut param_grads = param_grads;
        let mut delta = upstream.to_vec();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            if l + 1 < layers.len() {
                for (d, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                    *d *= self.spec.activation.derivative(z);
                }
            }
            let x = &tape.inputs[l];
            let off = offsets[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, rest) = g[off..].split_at_mut(fan_in * fan_out);
                // dW[o×i] += deltaᵀ · x
                gemm(fan_out, batch, fan_in, &delta, 1, fan_out as isize, x, fan_in as isize, 1, 1.0, gw);
                let gb = &mut rest[..fan_out];
                for row in delta.chunks_exact(fan_out) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if l == 0 && !want_input_grads {
                return Ok(None);
            }
            let w = &self.params.values[off..off + fan_in * fan_out];
            let mut next = vec![0.0; batch * fan_in];
            // dx[b×i] = delta · W
            gemm(batch, fan_out, fan_in, &delta, fan_out as isize, 1, w, fan_in as isize, 1, 0.0, &mut next);
            delta = next;
        }
        Ok(Some(delta))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1, &mut Tape::default())
    }

    /// Exact gradients of `⟨upstream, forward(input)⟩` with respect to the
    /// parameters and the input.
    pub fn grad(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.spec.output_dim, upstream.len())?;
        let mut tape = Tape::default();
        self.forward_batch(input, 1, &mut tape)?;
        let mut pg = vec![0.0; self.params.len()];
        let ig = self.backward_batch(&tape, upstream, Some(&mut pg), true)?.expect("input grads requested");
        Ok((pg, ig))
    }

    /// Input gradient only.
    pub fn input_grad(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_batch(input, 1, &mut tape)?;
        Ok(self.backward_batch(&tape, upstream, None, true)?.expect("input grads requested"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut Params, state: &mut AdamState, grads: &[f64]) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.m.len())?;
    state.t += 1;
    let bc1 = 1.0 - math::pow(state.beta1, state.t as f64);
    let bc2 = 1.0 - math::pow(state.beta2, state.t as f64);
    for i in 0..grads.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params.values[i] -= state.lr * m_hat / (sqrt(v_hat) + state.eps);
    }
    Ok(())
}
