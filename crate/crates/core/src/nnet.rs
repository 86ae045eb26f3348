//! Two-layer networks with symmetric initialization, small MLPs with manual
//! backpropagation, and the first-order optimizers that train them.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::math;
use crate::rng::{normal, permutation, sign, stream, Stream};
use crate::synth::SyntheticDataset;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `sigma(u) = u`
    Linear,
    Relu,
    Tanh,
    Erf,
}

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Linear => u,
            Activation::Relu => {
                if u > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(u),
            Activation::Erf => math::erf(u),
        }
    }

    /// Derivative; the relu derivative at exactly 0 is 0.
    #[inline]
    pub fn deriv(self, u: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = math::tanh(u);
                1.0 - t * t
            }
            Activation::Erf => core::f64::consts::FRAC_2_SQRT_PI * math::exp(-u * u),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Erf => "erf",
        }
    }
}

// Sums `w . a` over mirrored pairs `(j, j + len/2)` first. For symmetric
// networks each pair cancels exactly, so outputs at initialization are exactly
// zero rather than zero up to rounding.
#[inline]
fn paired_dot(w: &[f64], a: &[f64]) -> f64 {
    let half = w.len() / 2;
    let mut s = 0.0;
    for j in 0..half {
        s += w[j] * a[j] + w[j + half] * a[j + half];
    }
    if w.len() % 2 == 1 {
        s += w[2 * half] * a[2 * half];
    }
    s
}

/// `f(x) = (1/sqrt(m)) sum_r v_r sigma(w_r . x / sqrt(d))`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    w: Matrix,
    v: Vec<f64>,
    activation: Activation,
}

impl TwoLayerNet {
    /// Rows `0..m/2` of `W` are i.i.d. `N(0, I_d)`, signs `v_r` uniform on
    /// `{-1, 1}`; row `r + m/2` copies row `r` with `v_{r+m/2} = -v_r`.
    pub fn symmetric_init(d: usize, m: usize, activation: Activation, seed: u64) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::Width(m));
        }
        if d == 0 {
            return Err(Error::param("d", "input dimension must be positive"));
        }
        let half = m / 2;
        let mut wr = stream(seed, Stream::Weights);
        let mut sr = stream(seed, Stream::Signs);
        let mut data = vec![0.0; m * d];
        for r in 0..half {
            for j in 0..d {
                data[r * d + j] = normal(&mut wr);
            }
        }
        data.copy_within(0..half * d, half * d);
        let mut v = vec![0.0; m];
        for r in 0..half {
            v[r] = sign(&mut sr);
            v[r + half] = -v[r];
        }
        Ok(Self {
            w: Matrix::new(m, d, data)?,
            v,
            activation,
        })
    }

    /// Arbitrary weights, e.g. for hand-built probes.
    pub fn from_parts(w: Matrix, v: Vec<f64>, activation: Activation) -> Result<Self> {
        if w.rows() != v.len() {
            return Err(Error::dim("output signs per hidden unit", w.rows(), v.len()));
        }
        if w.is_empty() {
            return Err(Error::Width(w.rows()));
        }
        Ok(Self { w, v, activation })
    }

    pub fn width(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn signs(&self) -> &[f64] {
        &self.v
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let m = self.width();
        let inv_sqrt_d = 1.0 / math::sqrt(self.input_dim() as f64);
        let act: Vec<f64> = (0..m)
            .map(|r| self.activation.apply(dot(self.w.row(r), x) * inv_sqrt_d))
            .collect();
        Ok(paired_dot(&self.v, &act) / math::sqrt(m as f64))
    }

    /// Outputs for every row of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows()).map(|i| self.forward(x.row(i))).collect()
    }

    /// Gradient of the output w.r.t. `W`, flattened row-major.
    pub fn grad_params(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (m, d) = (self.width(), self.input_dim());
        let inv_sqrt_d = 1.0 / math::sqrt(d as f64);
        let c = inv_sqrt_d / math::sqrt(m as f64);
        let mut g = vec![0.0; m * d];
        for r in 0..m {
            let s = self.v[r] * self.activation.deriv(dot(self.w.row(r), x) * inv_sqrt_d) * c;
            if s == 0.0 {
                continue;
            }
            for (gj, &xj) in g[r * d..(r + 1) * d].iter_mut().zip(x) {
                *gj = s * xj;
            }
        }
        Ok(g)
    }

    /// Pre-activations `X W^T / sqrt(d)` (n x m).
    pub fn preactivations(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.cols()));
        }
        Ok(x.matmul_t(&self.w)?.scale(1.0 / math::sqrt(self.input_dim() as f64)))
    }
}

/// One dense layer `activation(W a + b)`; `W` is `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Extra inputs concatenated to the input of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub layer: usize,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MlpInit {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    Uniform,
    /// `N(0, scale^2)` for hidden weights and biases, `N(0, scale^2 / width)`
    /// for the output weights, output bias 0. Units of the last hidden layer
    /// are mirrored with negated output weights, so the output is exactly 0
    /// at initialization.
    Symmetric { scale: f64 },
}

/// Layer sizes and activations of an MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    /// `[input, hidden..., output]`
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub injection: Option<InjectionPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    injection: Option<InjectionPoint>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of each layer (including injected values), then the output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Output of hidden layer `l` (the input of layer `l + 1`).
    pub fn hidden(&self, l: usize) -> &[f64] {
        &self.inputs[l + 1]
    }
}

/// Gradients returned by [`Mlp::backward`] besides the parameter gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct InputGrads {
    pub input: Vec<f64>,
    pub injected: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, injection: Option<InjectionPoint>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("mlp without layers"));
        }
        if let Some(inj) = injection {
            if inj.layer >= layers.len() {
                return Err(Error::param("injection", "layer index out of range"));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::dim("layer bias", layer.out_dim(), layer.bias.len()));
            }
            if l > 0 {
                let extra = match injection {
                    Some(inj) if inj.layer == l => inj.dim,
                    _ => 0,
                };
                let expected = layers[l - 1].out_dim() + extra;
                if layer.in_dim() != expected {
                    return Err(Error::dim("layer input width", expected, layer.in_dim()));
                }
            }
        }
        Ok(Self { layers, injection })
    }

    pub fn init(shape: &MlpShape, init: MlpInit, seed: u64) -> Result<Self> {
        let sizes = &shape.sizes;
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::param("sizes", "need input and output sizes, all positive"));
        }
        let n_layers = sizes.len() - 1;
        let mut rng = stream(seed, Stream::Weights);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let extra = match shape.injection {
                Some(inj) if inj.layer == l => inj.dim,
                _ => 0,
            };
            let (fan_in, fan_out) = (sizes[l] + extra, sizes[l + 1]);
            let is_output = l + 1 == n_layers;
            let activation = if is_output { shape.output } else { shape.hidden };
            let (weights, bias) = match init {
                MlpInit::Uniform => {
                    let b = 1.0 / math::sqrt(fan_in as f64);
                    let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-b..b));
                    let bias = (0..fan_out).map(|_| rng.random_range(-b..b)).collect();
                    (w, bias)
                }
                MlpInit::Symmetric { scale } => {
                    if !(scale > 0.0) || !scale.is_finite() {
                        return Err(Error::param("scale", "must be positive and finite"));
                    }
                    if is_output {
                        let native = sizes[l];
                        let s = scale / math::sqrt(native as f64);
                        let w = Matrix::from_fn(fan_out, fan_in, |_, _| s * normal(&mut rng));
                        (w, vec![0.0; fan_out])
                    } else {
                        let w = Matrix::from_fn(fan_out, fan_in, |_, _| scale * normal(&mut rng));
                        let bias = (0..fan_out).map(|_| scale * normal(&mut rng)).collect();
                        (w, bias)
                    }
                }
            };
            layers.push(Layer {
                weights,
                bias,
                activation,
            });
        }
        if let MlpInit::Symmetric { .. } = init {
            if n_layers < 2 {
                return Err(Error::param("init", "symmetric init needs a hidden layer"));
            }
            let width = sizes[n_layers - 1];
            if width % 2 != 0 {
                return Err(Error::Width(width));
            }
            let half = width / 2;
            let hidden = &mut layers[n_layers - 2];
            for r in 0..half {
                let src = hidden.weights.row(r).to_vec();
                hidden.weights.row_mut(r + half).copy_from_slice(&src);
                hidden.bias[r + half] = hidden.bias[r];
            }
            let out = &mut layers[n_layers - 1];
            for o in 0..out.out_dim() {
                let row = out.weights.row_mut(o);
                for r in 0..half {
                    row[r + half] = -row[r];
                }
            }
        }
        Self::new(layers, shape.injection)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn injection(&self) -> Option<InjectionPoint> {
        self.injection
    }

    pub fn input_dim(&self) -> usize {
        let extra = match self.injection {
            Some(inj) if inj.layer == 0 => inj.dim,
            _ => 0,
        };
        self.layers[0].in_dim() - extra
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(l.weights.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::dim("parameter vector", self.num_params(), p.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_injected(x, &[])
    }

    /// Forward pass with `injected` concatenated to the input of the
    /// injection layer.
    pub fn forward_injected(&self, x: &[f64], injected: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x, injected)?.inputs.pop().unwrap_or_default())
    }

    pub fn forward_tape(&self, x: &[f64], injected: &[f64]) -> Result<Tape> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("mlp input", self.input_dim(), x.len()));
        }
        let inj_dim = self.injection.map(|i| i.dim).unwrap_or(0);
        if injected.len() != inj_dim {
            return Err(Error::dim("injected vector", inj_dim, injected.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let native = cur.len();
            if matches!(self.injection, Some(inj) if inj.layer == l) {
                cur.extend_from_slice(injected);
            }
            let mut z = Vec::with_capacity(layer.out_dim());
            for o in 0..layer.out_dim() {
                let w = layer.weights.row(o);
                let s = paired_dot(&w[..native], &cur[..native]) + dot(&w[native..], &cur[native..]);
                z.push(s + layer.bias[o]);
            }
            let a = z.iter().map(|&u| layer.activation.apply(u)).collect();
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        inputs.push(cur);
        Ok(Tape { inputs, pre })
    }

    /// Backpropagates `grad_out` (d loss / d output) through a recorded pass,
    /// accumulating into `grad` (laid out like [`Mlp::params`]) and returning
    /// the gradients w.r.t. the input and the injected vector.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grad: &mut [f64]) -> Result<InputGrads> {
        self.backward_from(tape, self.layers.len() - 1, grad_out, grad)
    }

    /// Like [`Mlp::backward`], starting from the output of layer `top`
    /// (layers above it receive no gradient).
    pub fn backward_from(&self, tape: &Tape, top: usize, grad_out: &[f64], grad: &mut [f64]) -> Result<InputGrads> {
        if top >= self.layers.len() {
            return Err(Error::param("top", "layer index out of range"));
        }
        if grad_out.len() != self.layers[top].out_dim() {
            return Err(Error::dim("output gradient", self.layers[top].out_dim(), grad_out.len()));
        }
        if grad.len() != self.num_params() {
            return Err(Error::dim("parameter gradient", self.num_params(), grad.len()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.as_slice().len() + l.bias.len();
        }
        let mut delta: Vec<f64> = grad_out.to_vec();
        let mut injected = Vec::new();
        for l in (0..=top).rev() {
            let layer = &self.layers[l];
            for (o, d) in delta.iter_mut().enumerate() {
                *d *= layer.activation.deriv(tape.pre[l][o]);
            }
            let input = &tape.inputs[l];
            let (gw, gb) = grad[offsets[l]..].split_at_mut(layer.weights.as_slice().len());
            let in_dim = layer.in_dim();
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, &a) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(input) {
                    *g += d * a;
                }
                gb[o] += d;
            }
            let mut back = vec![0.0; in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (b, &w) in back.iter_mut().zip(layer.weights.row(o)) {
                    *b += d * w;
                }
            }
            if let Some(inj) = self.injection {
                if inj.layer == l {
                    injected = back.split_off(in_dim - inj.dim);
                }
            }
            delta = back;
        }
        Ok(InputGrads {
            input: delta,
            injected,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(1/2) mean (f - y)^2`
    Squared,
    /// Mean binary cross-entropy on logits with 0/1 targets.
    CrossEntropy,
}

impl Loss {
    /// Value and derivative w.r.t. the prediction for one sample.
    #[inline]
    pub fn value_grad(self, pred: f64, target: f64) -> (f64, f64) {
        match self {
            Loss::Squared => {
                let r = pred - target;
                (0.5 * r * r, r)
            }
            Loss::CrossEntropy => {
                // softplus(z) - y z, written to avoid overflow
                let sp = if pred > 0.0 {
                    pred + math::ln_1p(math::exp(-pred))
                } else {
                    math::ln_1p(math::exp(pred))
                };
                let sig = if pred >= 0.0 {
                    1.0 / (1.0 + math::exp(-pred))
                } else {
                    let e = math::exp(pred);
                    e / (1.0 + e)
                };
                (sp - target * pred, sig - target)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    /// Number of parameter updates.
    pub steps: usize,
    /// Minibatch size; 0 means full batch.
    #[serde(default)]
    pub batch: usize,
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    /// Coupled L2 penalty: `weight_decay * p` is added to every gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_loss() -> Loss {
    Loss::Squared
}

fn default_optimizer() -> Optimizer {
    Optimizer::Sgd
}

impl TrainConfig {
    pub fn gd(step_size: f64, steps: usize) -> Self {
        Self {
            step_size,
            steps,
            batch: 0,
            loss: Loss::Squared,
            seed: 0,
            optimizer: Optimizer::Sgd,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::param("step_size", "must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::param("weight_decay", "must be finite and >= 0"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::param("optimizer", "adam needs betas in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

/// Optimizer state for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct OptState {
    kind: Optimizer,
    lr: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        let (m, v) = match cfg.optimizer {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.step_size,
            weight_decay: cfg.weight_decay,
            m,
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let wd = self.weight_decay;
        match self.kind {
            Optimizer::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * (g + wd * *p);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - math::powi(beta1, self.t);
                let c2 = 1.0 - math::powi(beta2, self.t);
                for i in 0..params.len() {
                    let g = grad[i] + wd * params[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    params[i] -= self.lr * (self.m[i] / c1) / (math::sqrt(self.v[i] / c2) + eps);
                }
            }
        }
    }
}

/// Yields the sample indices of every update: all of `0..n` for full batch,
/// otherwise consecutive slices of a fresh permutation per epoch.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: crate::rng::StreamRng,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let batch = if batch == 0 || batch >= n { n } else { batch };
        Self {
            n,
            batch,
            order: (0..n).collect(),
            cursor: n,
            rng: stream(seed, Stream::Batches),
        }
    }

    pub fn is_full_batch(&self) -> bool {
        self.batch == self.n
    }

    /// Indices of the next batch and whether it closes an epoch.
    pub fn next_batch(&mut self) -> (&[usize], bool) {
        if self.is_full_batch() {
            return (&self.order, true);
        }
        if self.cursor >= self.n {
            self.order = permutation(&mut self.rng, self.n);
            self.cursor = 0;
        }
        let start = self.cursor;
        let end = (start + self.batch).min(self.n);
        self.cursor = end;
        (&self.order[start..end], end == self.n)
    }
}

/// Models trainable by [`train_sgd`].
pub trait Trainable: Clone {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]) -> Result<()>;
    fn input_dim(&self) -> usize;
    /// Scalar prediction for one input.
    fn predict(&self, x: &[f64]) -> Result<f64>;
    /// Mean loss over `idx` and its gradient (written into `grad`).
    fn loss_grad(&self, x: &Matrix, y: &[f64], idx: &[usize], loss: Loss, grad: &mut [f64]) -> Result<f64>;
}

impl Trainable for TwoLayerNet {
    fn num_params(&self) -> usize {
        self.w.as_slice().len()
    }

    fn params(&self) -> Vec<f64> {
        self.w.as_slice().to_vec()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::dim("parameter vector", self.num_params(), p.len()));
        }
        self.w.as_mut_slice().copy_from_slice(p);
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.w.cols()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        self.forward(x)
    }

    fn loss_grad(&self, x: &Matrix, y: &[f64], idx: &[usize], loss: Loss, grad: &mut [f64]) -> Result<f64> {
        let (m, d) = (self.width(), self.input_dim());
        let inv_sqrt_d = 1.0 / math::sqrt(d as f64);
        let inv_sqrt_m = 1.0 / math::sqrt(m as f64);
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut pre = vec![0.0; m];
        let mut act = vec![0.0; m];
        for &i in idx {
            let xi = x.row(i);
            for r in 0..m {
                pre[r] = dot(self.w.row(r), xi) * inv_sqrt_d;
                act[r] = self.activation.apply(pre[r]);
            }
            let out = paired_dot(&self.v, &act) * inv_sqrt_m;
            let (l, dl) = loss.value_grad(out, y[i]);
            total += l;
            let c = dl * scale * inv_sqrt_m * inv_sqrt_d;
            for r in 0..m {
                let s = c * self.v[r] * self.activation.deriv(pre[r]);
                if s != 0.0 {
                    for (g, &xj) in grad[r * d..(r + 1) * d].iter_mut().zip(xi) {
                        *g += s * xj;
                    }
                }
            }
        }
        Ok(total * scale)
    }
}

impl Trainable for Mlp {
    fn num_params(&self) -> usize {
        Mlp::num_params(self)
    }

    fn params(&self) -> Vec<f64> {
        Mlp::params(self)
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        Mlp::set_params(self, p)
    }

    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }

    fn loss_grad(&self, x: &Matrix, y: &[f64], idx: &[usize], loss: Loss, grad: &mut [f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::dim("mlp output for scalar targets", 1, self.output_dim()));
        }
        if self.injection.is_some() {
            return Err(Error::param("injection", "train injected networks through the priming module"));
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for &i in idx {
            let tape = self.forward_tape(x.row(i), &[])?;
            let (l, dl) = loss.value_grad(tape.output()[0], y[i]);
            total += l;
            self.backward(&tape, &[dl * scale], grad)?;
        }
        Ok(total * scale)
    }
}

/// Trains a copy of `model` for exactly `cfg.steps` updates.
///
/// The trace holds the pre-update loss of every step for full-batch
/// training, or the mean minibatch loss of every completed (or final
/// partial) epoch otherwise.
pub fn train_sgd<M: Trainable>(model: &M, data: &SyntheticDataset, cfg: &TrainConfig) -> Result<(M, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::dim("training input width", model.input_dim(), data.dim()));
    }
    let mut model = model.clone();
    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    let mut opt = OptState::new(cfg, params.len());
    let mut batches = BatchSchedule::new(data.len(), cfg.batch, cfg.seed);
    let full = batches.is_full_batch();
    let mut trace = Vec::new();
    let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
    for step in 0..cfg.steps {
        let (idx, epoch_end) = batches.next_batch();
        let loss = model.loss_grad(data.inputs(), data.targets(), idx, cfg.loss, &mut grad)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(step));
        }
        opt.step(&mut params, &grad);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(step));
        }
        model.set_params(&params)?;
        if full {
            trace.push(loss);
        } else {
            epoch_sum += loss;
            epoch_count += 1;
            if epoch_end {
                trace.push(epoch_sum / epoch_count as f64);
                epoch_sum = 0.0;
                epoch_count = 0;
            }
        }
    }
    if epoch_count > 0 {
        trace.push(epoch_sum / epoch_count as f64);
    }
    Ok((model, trace))
}

/// Root mean squared error of `model` on `data`.
pub fn rmse<M: Trainable>(model: &M, data: &SyntheticDataset) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..data.len() {
        let r = model.predict(data.inputs().row(i))? - data.targets()[i];
        s += r * r;
    }
    Ok(math::sqrt(s / data.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;
    use crate::synth::{GeneratorId, Region};

    #[test]
    fn mirrored_pair_cancels() {
        let net = TwoLayerNet::symmetric_init(1, 2, Activation::Tanh, 0).unwrap();
        for x in [-3.0, 0.0, 0.7, 12.0] {
            assert_eq!(net.forward(&[x]).unwrap(), 0.0);
        }
        assert!(matches!(
            TwoLayerNet::symmetric_init(2, 3, Activation::Relu, 0),
            Err(Error::Width(3))
        ));
    }

    #[test]
    fn hand_computed_relu_probe() {
        let w = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let net = TwoLayerNet::from_parts(w, vec![1.0, 1.0], Activation::Relu).unwrap();
        let out = net.forward(&[4.0]).unwrap();
        assert!((out - 8.0 / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn forward_matches_direct_formula() {
        let mut rng = stream(3, Stream::Custom(0));
        let (m, d) = (10, 5);
        let w = Matrix::new(m, d, normal_vec(&mut rng, m * d)).unwrap();
        let v = normal_vec(&mut rng, m);
        let x = normal_vec(&mut rng, d);
        for act in [Activation::Relu, Activation::Tanh, Activation::Erf] {
            let net = TwoLayerNet::from_parts(w.clone(), v.clone(), act).unwrap();
            let mut oracle = 0.0;
            for r in 0..m {
                let mut u = 0.0;
                for j in 0..d {
                    u += w.get(r, j) * x[j];
                }
                let s = match act {
                    Activation::Relu => u.max(0.0) / (d as f64).sqrt(),
                    Activation::Tanh => (u / (d as f64).sqrt()).tanh(),
                    _ => libm::erf(u / (d as f64).sqrt()),
                };
                oracle += v[r] * s;
            }
            oracle /= (m as f64).sqrt();
            assert!((net.forward(&x).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_zero_input_relu() {
        let net = TwoLayerNet::symmetric_init(3, 8, Activation::Relu, 1).unwrap();
        assert!(net.grad_params(&[0.0; 3]).unwrap().iter().all(|&g| g == 0.0));
        assert!(net.forward(&[0.0; 2]).is_err());
    }

    #[test]
    fn relu_grad_scales_with_input() {
        // All weights positive and a positive input: every unit stays active.
        let w = Matrix::from_fn(6, 3, |r, j| 0.5 + (r + j) as f64 * 0.1);
        let net = TwoLayerNet::from_parts(w, vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0], Activation::Relu).unwrap();
        let x = [0.3, 1.2, 0.8];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let g1 = net.grad_params(&x).unwrap();
        let g2 = net.grad_params(&x2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_grad_matches_central_differences() {
        let mut rng = stream(5, Stream::Custom(1));
        let (m, d) = (6, 4);
        let w = Matrix::new(m, d, normal_vec(&mut rng, m * d)).unwrap();
        let net = TwoLayerNet::from_parts(w, normal_vec(&mut rng, m), Activation::Tanh).unwrap();
        let x = normal_vec(&mut rng, d);
        let g = net.grad_params(&x).unwrap();
        let h = 1e-5;
        for k in 0..m * d {
            let mut p = net.params();
            p[k] += h;
            let mut plus = net.clone();
            plus.set_params(&p).unwrap();
            p[k] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_params(&p).unwrap();
            let fd = (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
        }
    }

    fn linear_data(n: usize, d: usize, seed: u64) -> SyntheticDataset {
        let mut rng = stream(seed, Stream::Custom(2));
        let x = Matrix::new(n, d, normal_vec(&mut rng, n * d)).unwrap();
        let beta = normal_vec(&mut rng, d);
        let y = (0..n).map(|i| dot(x.row(i), &beta) / (d as f64).sqrt()).collect();
        SyntheticDataset::new(x, y, Region::InDistribution, GeneratorId::SubgaussianLinear, seed).unwrap()
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let net = TwoLayerNet::symmetric_init(4, 16, Activation::Relu, 0).unwrap();
        let (out, trace) = train_sgd(&net, &linear_data(10, 4, 0), &TrainConfig::gd(0.1, 0)).unwrap();
        assert_eq!(out, net);
        assert!(trace.is_empty());
    }

    #[test]
    fn gd_below_gram_bound_is_monotone() {
        let data = linear_data(32, 8, 1);
        let net = TwoLayerNet::symmetric_init(8, 256, Activation::Relu, 2).unwrap();
        let phi: Vec<Vec<f64>> = (0..32).map(|i| net.grad_params(data.inputs().row(i)).unwrap()).collect();
        let k = Matrix::from_rows(&phi).unwrap().gram_rows();
        let lmax = crate::linalg::sym_eigenvalues(&k).unwrap()[0];
        let (_, trace) = train_sgd(&net, &data, &TrainConfig::gd(1.0 / lmax, 200)).unwrap();
        assert!(trace[1] < trace[0]);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn divergence_reports_step() {
        let data = linear_data(16, 4, 3);
        let net = TwoLayerNet::symmetric_init(4, 16, Activation::Relu, 0).unwrap();
        let r = train_sgd(&net, &data, &TrainConfig::gd(1e200, 50));
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn symmetric_mlp_outputs_zero() {
        let shape = MlpShape {
            sizes: vec![3, 8, 6, 1],
            hidden: Activation::Tanh,
            output: Activation::Linear,
            injection: None,
        };
        let mlp = Mlp::init(&shape, MlpInit::Symmetric { scale: 0.5 }, 4).unwrap();
        let mut rng = stream(0, Stream::Probe);
        for _ in 0..50 {
            assert_eq!(mlp.forward(&normal_vec(&mut rng, 3)).unwrap()[0], 0.0);
        }
    }

    fn mlp_fd_check(mlp: &Mlp, x: &[f64], inj: &[f64]) {
        let tape = mlp.forward_tape(x, inj).unwrap();
        let mut grad = vec![0.0; mlp.num_params()];
        let out_dim = mlp.output_dim();
        let weights: Vec<f64> = (0..out_dim).map(|o| 1.0 + o as f64).collect();
        let ig = mlp.backward(&tape, &weights, &mut grad).unwrap();
        let obj = |m: &Mlp, x: &[f64], inj: &[f64]| -> f64 {
            let o = m.forward_injected(x, inj).unwrap();
            o.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-4);
        let p = mlp.params();
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] += h;
            let mut plus = mlp.clone();
            plus.set_params(&q).unwrap();
            q[k] -= 2.0 * h;
            let mut minus = mlp.clone();
            minus.set_params(&q).unwrap();
            let fd = (obj(&plus, x, inj) - obj(&minus, x, inj)) / (2.0 * h);
            assert!(close(fd, grad[k]), "param {k}: {fd} vs {}", grad[k]);
        }
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            xp[k] += h;
            let mut xm = x.to_vec();
            xm[k] -= h;
            let fd = (obj(mlp, &xp, inj) - obj(mlp, &xm, inj)) / (2.0 * h);
            assert!(close(fd, ig.input[k]));
        }
        for k in 0..inj.len() {
            let mut ip = inj.to_vec();
            ip[k] += h;
            let mut im = inj.to_vec();
            im[k] -= h;
            let fd = (obj(mlp, x, &ip) - obj(mlp, x, &im)) / (2.0 * h);
            assert!(close(fd, ig.injected[k]));
        }
    }

    #[test]
    fn mlp_backprop_matches_central_differences() {
        let mut rng = stream(1, Stream::Probe);
        for layer in [None, Some(0), Some(1), Some(2)] {
            let shape = MlpShape {
                sizes: vec![3, 5, 4, 2],
                hidden: Activation::Tanh,
                output: Activation::Linear,
                injection: layer.map(|l| InjectionPoint { layer: l, dim: 2 }),
            };
            let mlp = Mlp::init(&shape, MlpInit::Uniform, 7).unwrap();
            let x = normal_vec(&mut rng, 3);
            let inj = if layer.is_some() { normal_vec(&mut rng, 2) } else { Vec::new() };
            mlp_fd_check(&mlp, &x, &inj);
        }
    }

    #[test]
    fn mlp_fits_linear_data() {
        let data = linear_data(64, 3, 4);
        let shape = MlpShape {
            sizes: vec![3, 16, 1],
            hidden: Activation::Tanh,
            output: Activation::Linear,
            injection: None,
        };
        let mlp = Mlp::init(&shape, MlpInit::Uniform, 0).unwrap();
        let cfg = TrainConfig {
            step_size: 1e-2,
            steps: 1500,
            optimizer: Optimizer::adam(),
            ..TrainConfig::gd(1e-2, 1500)
        };
        let (fit, trace) = train_sgd(&mlp, &data, &cfg).unwrap();
        assert!(trace.last().unwrap() < &(trace[0] * 0.02));
        assert!(rmse(&fit, &data).unwrap() < 0.2);
    }

    #[test]
    fn minibatch_trace_is_per_epoch() {
        let data = linear_data(10, 2, 5);
        let net = TwoLayerNet::symmetric_init(2, 4, Activation::Relu, 0).unwrap();
        let cfg = TrainConfig {
            batch: 4,
            ..TrainConfig::gd(0.01, 9)
        };
        // 3 updates per epoch (4 + 4 + 2 samples)
        let (_, trace) = train_sgd(&net, &data, &cfg).unwrap();
        assert_eq!(trace.len(), 3);
    }

    #[test]
    fn cross_entropy_gradient() {
        for (z, y) in [(0.3, 1.0), (-2.0, 0.0), (40.0, 1.0), (-40.0, 1.0)] {
            let (l, g) = Loss::CrossEntropy.value_grad(z, y);
            let h = 1e-6;
            let fd = (Loss::CrossEntropy.value_grad(z + h, y).0 - Loss::CrossEntropy.value_grad(z - h, y).0) / (2.0 * h);
            assert!(l.is_finite());
            assert!((fd - g).abs() < 1e-6);
        }
    }
}
