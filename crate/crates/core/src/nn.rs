//! Fixed-shape multilayer perceptron used as the Q-function approximator.
//!
//! Hidden layers use ReLU, the output layer is linear. Weights are stored
//! row-major with shape `(outputs, inputs)`. Batched passes go through
//! `matrixmultiply::dgemm`; the single-vector entry points are batches of one.
//!
//! # Snapshot format
//!
//! [`NetworkParams::to_snapshot`] writes a versioned text file:
//!
//! ```text
//! qnet-snapshot 1
//! dims 10 64 64 2
//! layer 0
//! <64 lines of 10 weights, row-major>
//! <1 line of 64 biases>
//! layer 1
//! ...
//! ```
//!
//! Values are whitespace separated and printed in shortest round-trip
//! exponent form (`{:e}`), so a snapshot reloads bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

const SNAPSHOT_MAGIC: &str = "qnet-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("non-finite gradient entry; update rejected")]
    NonFiniteGradient,
    #[error("invalid optimizer setting: {0}")]
    InvalidOptimizer(String),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dense layer: `weights` is `(outputs, inputs)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, NnError> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::InvalidArchitecture("layer widths must be > 0".into()));
        }
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(NnError::ShapeMismatch(format!(
                "layer {inputs}->{outputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { inputs, outputs, weights, bias })
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { inputs, outputs, weights, bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parameters of a ReLU MLP. Both the online and the target Q-network are
/// instances of this type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

/// Gradient of a scalar objective with respect to every entry of a
/// [`NetworkParams`], laid out identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

/// Activations recorded by a batched forward pass, consumed by
/// [`NetworkParams::backward_trace`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    /// `activations[0]` is the input batch, the last entry the output batch.
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output rows, `batch × outputs` row-major.
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }
}

fn check_chain(layers: &[Layer]) -> Result<(), NnError> {
    if layers.is_empty() {
        return Err(NnError::InvalidArchitecture("network needs at least one layer".into()));
    }
    for (k, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs != pair[1].inputs {
            return Err(NnError::InvalidArchitecture(format!(
                "layer {k} emits {} values but layer {} expects {}",
                pair[0].outputs,
                k + 1,
                pair[1].inputs
            )));
        }
    }
    Ok(())
}

impl NetworkParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        check_chain(&layers)?;
        if layers.iter().flat_map(Layer::values).any(|v| !v.is_finite()) {
            return Err(NnError::InvalidArchitecture("parameters must be finite".into()));
        }
        Ok(Self { layers })
    }

    /// Seeded Glorot-uniform initialization for widths `dims[0] -> ... -> dims[last]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::InvalidArchitecture(format!("bad layer widths {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    /// All-zero network with the given widths.
    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::InvalidArchitecture(format!("bad layer widths {dims:?}")));
        }
        Ok(Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Layer widths including the input width.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::values).all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &NetworkParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// Q-values for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.forward_batch(x, 1)
    }

    /// Outputs for `batch` row-major inputs, returned `batch × outputs` row-major.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>, NnError> {
        self.check_input(xs, batch)?;
        let mut current = xs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            current = layer_forward(layer, &current, batch, k + 1 < self.layers.len());
        }
        Ok(current)
    }

    /// Forward pass that keeps the activations needed for backpropagation.
    pub fn forward_trace(&self, xs: &[f64], batch: usize) -> Result<ForwardTrace, NnError> {
        self.check_input(xs, batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(xs.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let next = layer_forward(layer, &activations[k], batch, k + 1 < self.layers.len());
            activations.push(next);
        }
        Ok(ForwardTrace { batch, activations })
    }

    /// Gradient of `grad_out · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<Gradients, NnError> {
        let trace = self.forward_trace(x, 1)?;
        self.backward_trace(&trace, grad_out)
    }

    /// Reverse-mode pass over a recorded batch. `grad_out` is `batch × outputs`
    /// row-major; the returned gradient is summed over the batch.
    pub fn backward_trace(&self, trace: &ForwardTrace, grad_out: &[f64]) -> Result<Gradients, NnError> {
        let batch = trace.batch;
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch("trace was recorded on a different network".into()));
        }
        if grad_out.len() != batch * self.output_dim() {
            return Err(NnError::DimensionMismatch { expected: batch * self.output_dim(), got: grad_out.len() });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.activations[k];
            if input.len() != batch * layer.inputs {
                return Err(NnError::ShapeMismatch("trace was recorded on a different network".into()));
            }
            let g = &mut grads.layers[k];
            // dW = deltaᵀ · input
            gemm(layer.outputs, batch, layer.inputs, &delta, 1, layer.outputs, input, layer.inputs, 1, &mut g.weights, layer.inputs);
            for row in delta.chunks_exact(layer.outputs) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if k == 0 {
                break;
            }
            // d(input) = delta · W, masked by the ReLU that produced `input`
            let mut upstream = vec![0.0; batch * layer.inputs];
            gemm(batch, layer.outputs, layer.inputs, &delta, layer.outputs, 1, &layer.weights, layer.inputs, 1, &mut upstream, layer.inputs);
            for (u, a) in upstream.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        Ok(grads)
    }

    fn check_input(&self, xs: &[f64], batch: usize) -> Result<(), NnError> {
        let expected = batch * self.input_dim();
        if batch == 0 || xs.len() != expected {
            return Err(NnError::DimensionMismatch { expected, got: xs.len() });
        }
        Ok(())
    }

    /// Blend `self ← τ·online + (1 − τ)·self` elementwise.
    pub fn soft_update_from(&mut self, online: &NetworkParams, tau: f64) -> Result<(), NnError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(NnError::InvalidOptimizer(format!("soft-update factor {tau} outside (0, 1]")));
        }
        if !self.same_shape(online) {
            return Err(NnError::ShapeMismatch("online and target networks differ in shape".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t.values_mut().zip(o.values()) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.dims().iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "dims {}", dims.join(" "));
        for (k, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "layer {k}");
            for row in layer.weights.chunks_exact(layer.inputs) {
                write_row(&mut out, row);
            }
            write_row(&mut out, &layer.bias);
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, NnError> {
        let bad = |msg: &str| NnError::Snapshot(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty snapshot"))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [magic, version] if *magic == SNAPSHOT_MAGIC => {
                if version.parse::<u32>().ok() != Some(SNAPSHOT_VERSION) {
                    return Err(bad(&format!("unsupported version {version}")));
                }
            }
            _ => return Err(bad("missing header")),
        }
        let dims_line = lines.next().ok_or_else(|| bad("missing dims line"))?;
        let mut fields = dims_line.split_whitespace();
        if fields.next() != Some("dims") {
            return Err(bad("missing dims line"));
        }
        let dims = fields
            .map(|f| f.parse::<usize>().map_err(|_| bad("dims must be integers")))
            .collect::<Result<Vec<_>, _>>()?;
        if dims.len() < 2 {
            return Err(bad("need at least two widths"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let (inputs, outputs) = (w[0], w[1]);
            if lines.next().map(str::trim) != Some(format!("layer {k}").as_str()) {
                return Err(bad(&format!("missing 'layer {k}' marker")));
            }
            let mut weights = Vec::with_capacity(inputs * outputs);
            for _ in 0..outputs {
                let row = parse_row(lines.next().ok_or_else(|| bad("truncated weights"))?)?;
                if row.len() != inputs {
                    return Err(bad(&format!("layer {k} weight row has {} values, expected {inputs}", row.len())));
                }
                weights.extend(row);
            }
            let bias = parse_row(lines.next().ok_or_else(|| bad("truncated bias"))?)?;
            layers.push(Layer::new(inputs, outputs, weights, bias).map_err(|e| bad(&e.to_string()))?);
        }
        if lines.next().is_some() {
            return Err(bad("trailing data"));
        }
        Self::from_layers(layers).map_err(|e| bad(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_snapshot())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_snapshot(&std::fs::read_to_string(path)?)
    }
}

fn write_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

fn parse_row(line: &str) -> Result<Vec<f64>, NnError> {
    line.split_whitespace()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| NnError::Snapshot(format!("bad value '{f}'")))
        })
        .collect()
}

fn layer_forward(layer: &Layer, input: &[f64], batch: usize, relu: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * layer.outputs);
    for _ in 0..batch {
        out.extend_from_slice(&layer.bias);
    }
    // out += input · Wᵀ
    gemm(batch, layer.inputs, layer.outputs, input, layer.inputs, 1, &layer.weights, 1, layer.inputs, &mut out, layer.outputs);
    if relu {
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// `c += a · b` for `a: m×k`, `b: k×n`, `c: m×n` (row stride `rsc`), with
/// arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], rsc: usize) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m == 0 || n == 0 || (m - 1) * rsc + n <= c.len());
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self { layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.layers.iter_mut().flat_map(Layer::values_mut) {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::values).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers.iter().flat_map(Layer::values).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flattened view in layer order, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::values).copied().collect()
    }

    /// Overwrite from a flat vector in [`Gradients::flatten`] order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        let count: usize = self.layers.iter().map(|l| l.values().count()).sum();
        if values.len() != count {
            return Err(NnError::DimensionMismatch { expected: count, got: values.len() });
        }
        for (dst, src) in self.layers.iter_mut().flat_map(Layer::values_mut).zip(values) {
            *dst = *src;
        }
        Ok(())
    }
}

impl NetworkParams {
    /// Flattened view in the same order as [`Gradients::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Layer::values).copied().collect()
    }

    /// Overwrite parameters from a flat vector produced by [`NetworkParams::flatten`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.parameter_count() {
            return Err(NnError::DimensionMismatch { expected: self.parameter_count(), got: values.len() });
        }
        for (dst, src) in self.layers.iter_mut().flat_map(Layer::values_mut).zip(values) {
            *dst = *src;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidOptimizer(format!("learning rate {}", self.learning_rate)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(NnError::InvalidOptimizer(format!("moment decays ({}, {})", self.beta1, self.beta2)));
        }
        if !(self.epsilon > 0.0) {
            return Err(NnError::InvalidOptimizer(format!("epsilon {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Gradients,
    second: Gradients,
    steps: u64,
}

impl Adam {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Result<Self, NnError> {
        config.validate()?;
        Ok(Self { config, first: Gradients::zeros_like(params), second: Gradients::zeros_like(params), steps: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. Non-finite gradients leave both the parameters and
    /// the optimizer state untouched.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != params.layers.len()
            || grads.layers.iter().zip(&params.layers).any(|(g, p)| !g.same_shape(p))
            || !self.first.layers.iter().zip(&params.layers).all(|(m, p)| m.same_shape(p))
        {
            return Err(NnError::ShapeMismatch("gradient does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.steps += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.steps as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            for (((pv, gv), mv), vv) in p.values_mut().zip(g.values()).zip(m.values_mut()).zip(v.values_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / correct1;
                let v_hat = *vv / correct2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
