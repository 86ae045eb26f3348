//! Primed networks: a priming module maps key inputs to a coarse estimate
//! `zeta`, which is concatenated into one layer of the main module.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::nnet::{
    Activation, BatchSchedule, InjectionPoint, Mlp, MlpInit, MlpShape, OptState, Tape, TrainConfig, TwoLayerNet,
};
use crate::rng::derive_seed;
use crate::synth::{SequenceDataset, StackedSamples, SyntheticDataset};

/// Elementwise maps usable as key-input extractors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyFunction {
    Abs,
    Square,
    /// Euclidean norm of the whole input (one output coordinate).
    Norm,
}

/// How the key input `k(x)` is extracted from the full input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KeyInputSpec {
    Identity { dim: usize },
    /// Coordinates `start..end` of an `input_dim`-vector.
    FeatureSlice { input_dim: usize, start: usize, end: usize },
    /// Newest frame of `history` stacked frames.
    LastFrame { history: usize, frame_dim: usize },
    Custom { input_dim: usize, function: KeyFunction },
}

impl KeyInputSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KeyInputSpec::Identity { dim } => dim > 0,
            KeyInputSpec::FeatureSlice { input_dim, start, end } => start < end && end <= input_dim,
            KeyInputSpec::LastFrame { history, frame_dim } => history > 0 && frame_dim > 0,
            KeyInputSpec::Custom { input_dim, .. } => input_dim > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("key_input", "empty or out-of-range extraction"))
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            KeyInputSpec::Identity { dim } => dim,
            KeyInputSpec::FeatureSlice { input_dim, .. } => input_dim,
            KeyInputSpec::LastFrame { history, frame_dim } => history * frame_dim,
            KeyInputSpec::Custom { input_dim, .. } => input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            KeyInputSpec::Identity { dim } => dim,
            KeyInputSpec::FeatureSlice { start, end, .. } => end - start,
            KeyInputSpec::LastFrame { frame_dim, .. } => frame_dim,
            KeyInputSpec::Custom { input_dim, function } => match function {
                KeyFunction::Norm => 1,
                _ => input_dim,
            },
        }
    }
}

pub fn extract_key(spec: &KeyInputSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.len() != spec.input_dim() {
        return Err(Error::dim("key input source", spec.input_dim(), x.len()));
    }
    Ok(match *spec {
        KeyInputSpec::Identity { .. } => x.to_vec(),
        KeyInputSpec::FeatureSlice { start, end, .. } => x[start..end].to_vec(),
        KeyInputSpec::LastFrame { history, frame_dim } => x[(history - 1) * frame_dim..].to_vec(),
        KeyInputSpec::Custom { function, .. } => match function {
            KeyFunction::Abs => x.iter().map(|v| v.abs()).collect(),
            KeyFunction::Square => x.iter().map(|v| v * v).collect(),
            KeyFunction::Norm => vec![crate::linalg::norm(x)],
        },
    })
}

/// Closed-form priming variables, applied elementwise to the key input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Teacher {
    Zero,
    Power { exponent: i32 },
}

impl Teacher {
    pub fn apply(self, key: &[f64]) -> Vec<f64> {
        match self {
            Teacher::Zero => vec![0.0; key.len()],
            Teacher::Power { exponent } => key.iter().map(|&v| math::powi(v, exponent)).collect(),
        }
    }

    /// Short label such as `0` or `x^5`.
    pub fn label(self) -> alloc::string::String {
        match self {
            Teacher::Zero => "0".into(),
            Teacher::Power { exponent } => alloc::format!("x^{exponent}"),
        }
    }
}

/// Which activation of a learned priming network is fused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZetaSource {
    Output,
    /// Output of hidden layer `layer` (0 is the first hidden layer).
    Hidden { layer: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimingModule {
    Learned { net: Mlp, source: ZetaSource },
    Teacher { teacher: Teacher },
}

/// Applied to `zeta` before fusion; `Relu` rectifies classification logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaTransform {
    #[default]
    Identity,
    Relu,
}

impl ZetaTransform {
    fn apply(self, z: &mut [f64]) {
        if self == ZetaTransform::Relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    fn deriv(self, z: f64) -> f64 {
        match self {
            ZetaTransform::Identity => 1.0,
            ZetaTransform::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    InputConcat,
    MiddleConcat,
    PenultimateConcat,
}

impl Fusion {
    pub const ALL: [Fusion; 3] = [Fusion::InputConcat, Fusion::MiddleConcat, Fusion::PenultimateConcat];

    /// Index of the main-module layer whose input receives `zeta`.
    pub fn layer(self, num_layers: usize) -> usize {
        match self {
            Fusion::InputConcat => 0,
            Fusion::MiddleConcat => num_layers / 2,
            Fusion::PenultimateConcat => num_layers.saturating_sub(1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::InputConcat => "input_concat",
            Fusion::MiddleConcat => "middle_concat",
            Fusion::PenultimateConcat => "penultimate_concat",
        }
    }
}

/// Priming module, key-input extractor and main module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimeNetModel {
    priming: PrimingModule,
    main: Mlp,
    key_input: KeyInputSpec,
    fusion: Fusion,
    stop_gradient: bool,
    zeta_transform: ZetaTransform,
    zeta_dim: usize,
}

/// Architecture of a learned priming network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimingSpec {
    Learned { hidden: Vec<usize>, source: ZetaSource },
    Teacher { teacher: Teacher },
}

/// Everything needed to initialize a [`PrimeNetModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeNetSpec {
    pub key_input: KeyInputSpec,
    pub priming: PrimingSpec,
    /// Hidden widths of the main module.
    pub main_hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub fusion: Fusion,
    #[serde(default = "default_true")]
    pub stop_gradient: bool,
    #[serde(default)]
    pub zeta_transform: ZetaTransform,
    pub main_init: MlpInit,
    pub priming_init: MlpInit,
}

fn default_true() -> bool {
    true
}

impl PrimeNetModel {
    pub fn new(
        priming: PrimingModule,
        main: Mlp,
        key_input: KeyInputSpec,
        fusion: Fusion,
        stop_gradient: bool,
        zeta_transform: ZetaTransform,
    ) -> Result<Self> {
        key_input.validate()?;
        let zeta_dim = match &priming {
            PrimingModule::Teacher { .. } => key_input.output_dim(),
            PrimingModule::Learned { net, source } => {
                if net.input_dim() != key_input.output_dim() {
                    return Err(Error::dim("priming input", key_input.output_dim(), net.input_dim()));
                }
                if net.injection().is_some() {
                    return Err(Error::param("priming", "priming network cannot take injected inputs"));
                }
                match *source {
                    ZetaSource::Output => net.output_dim(),
                    ZetaSource::Hidden { layer } => {
                        if layer + 1 >= net.num_layers() {
                            return Err(Error::param("source", "hidden layer index out of range"));
                        }
                        net.layers()[layer].out_dim()
                    }
                }
            }
        };
        let expected = InjectionPoint {
            layer: fusion.layer(main.num_layers()),
            dim: zeta_dim,
        };
        if main.injection() != Some(expected) {
            return Err(Error::param("main", "injection point does not match fusion and zeta width"));
        }
        if main.input_dim() != key_input.input_dim() {
            return Err(Error::dim("main input", key_input.input_dim(), main.input_dim()));
        }
        Ok(Self {
            priming,
            main,
            key_input,
            fusion,
            stop_gradient,
            zeta_transform,
            zeta_dim,
        })
    }

    /// Initializes both modules; the main module uses `seed` and the
    /// priming network a seed derived from it.
    pub fn build(spec: &PrimeNetSpec, seed: u64) -> Result<Self> {
        spec.key_input.validate()?;
        let key_dim = spec.key_input.output_dim();
        let (priming, zeta_dim) = match &spec.priming {
            PrimingSpec::Teacher { teacher } => (PrimingModule::Teacher { teacher: *teacher }, key_dim),
            PrimingSpec::Learned { hidden, source } => {
                let mut sizes = vec![key_dim];
                sizes.extend_from_slice(hidden);
                sizes.push(spec.output_dim);
                let shape = MlpShape {
                    sizes,
                    hidden: spec.activation,
                    output: Activation::Linear,
                    injection: None,
                };
                let net = Mlp::init(&shape, spec.priming_init, derive_seed(seed, 1))?;
                let dim = match *source {
                    ZetaSource::Output => spec.output_dim,
                    ZetaSource::Hidden { layer } => *hidden
                        .get(layer)
                        .ok_or_else(|| Error::param("source", "hidden layer index out of range"))?,
                };
                (PrimingModule::Learned { net, source: *source }, dim)
            }
        };
        let mut sizes = vec![spec.key_input.input_dim()];
        sizes.extend_from_slice(&spec.main_hidden);
        sizes.push(spec.output_dim);
        let injection = InjectionPoint {
            layer: spec.fusion.layer(sizes.len() - 1),
            dim: zeta_dim,
        };
        let shape = MlpShape {
            sizes,
            hidden: spec.activation,
            output: Activation::Linear,
            injection: Some(injection),
        };
        let main = Mlp::init(&shape, spec.main_init, seed)?;
        Self::new(
            priming,
            main,
            spec.key_input.clone(),
            spec.fusion,
            spec.stop_gradient,
            spec.zeta_transform,
        )
    }

    pub fn priming(&self) -> &PrimingModule {
        &self.priming
    }

    pub fn main(&self) -> &Mlp {
        &self.main
    }

    pub fn main_mut(&mut self) -> &mut Mlp {
        &mut self.main
    }

    pub fn key_input(&self) -> &KeyInputSpec {
        &self.key_input
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn stop_gradient(&self) -> bool {
        self.stop_gradient
    }

    pub fn zeta_transform(&self) -> ZetaTransform {
        self.zeta_transform
    }

    pub fn zeta_dim(&self) -> usize {
        self.zeta_dim
    }

    pub fn input_dim(&self) -> usize {
        self.main.input_dim()
    }

    /// Parameters of the learned priming network (empty for teachers).
    pub fn priming_params(&self) -> Vec<f64> {
        match &self.priming {
            PrimingModule::Learned { net, .. } => net.params(),
            PrimingModule::Teacher { .. } => Vec::new(),
        }
    }

    /// Priming variable fed to the main module, after the transform.
    pub fn zeta(&self, x: &[f64]) -> Result<Vec<f64>> {
        let key = extract_key(&self.key_input, x)?;
        let mut z = match &self.priming {
            PrimingModule::Teacher { teacher } => teacher.apply(&key),
            PrimingModule::Learned { net, source } => {
                let tape = net.forward_tape(&key, &[])?;
                zeta_from_tape(&tape, *source).to_vec()
            }
        };
        self.zeta_transform.apply(&mut z);
        Ok(z)
    }
}

fn zeta_from_tape(tape: &Tape, source: ZetaSource) -> &[f64] {
    match source {
        ZetaSource::Output => tape.output(),
        ZetaSource::Hidden { layer } => tape.hidden(layer),
    }
}

/// Returns `(y_hat, zeta)`.
pub fn forward_primed(model: &PrimeNetModel, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let zeta = model.zeta(x)?;
    let y = model.main.forward_injected(x, &zeta)?;
    Ok((y, zeta))
}

/// Main-module output with `zeta` replaced by `zeta_override`.
pub fn intervene_zeta(model: &PrimeNetModel, x: &[f64], zeta_override: &[f64]) -> Result<Vec<f64>> {
    if zeta_override.len() != model.zeta_dim {
        return Err(Error::dim("zeta override", model.zeta_dim, zeta_override.len()));
    }
    model.main.forward_injected(x, zeta_override)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Both modules updated at every step.
    EndToEnd,
    /// `priming_steps` updates of the priming network alone, then
    /// `steps` updates of the main module with the priming network frozen.
    TwoStage { priming_steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimeTrainConfig {
    pub train: TrainConfig,
    #[serde(default = "unit")]
    pub priming_weight: f64,
    #[serde(default = "unit")]
    pub main_weight: f64,
    #[serde(default = "end_to_end")]
    pub schedule: Schedule,
}

fn unit() -> f64 {
    1.0
}

fn end_to_end() -> Schedule {
    Schedule::EndToEnd
}

impl PrimeTrainConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            train,
            priming_weight: 1.0,
            main_weight: 1.0,
            schedule: Schedule::EndToEnd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for w in [self.priming_weight, self.main_weight] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::param("loss weights", "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Pre-update losses of one step; `None` where a loss was not evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss_priming: Option<f64>,
    pub loss_main: Option<f64>,
}

fn check_data(model: &PrimeNetModel, data: &SyntheticDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::dim("training input width", model.input_dim(), data.dim()));
    }
    if model.main.output_dim() != 1 {
        return Err(Error::dim("main output for scalar targets", 1, model.main.output_dim()));
    }
    Ok(())
}

struct PrimingPass {
    loss: f64,
    tapes: Vec<Tape>,
}

// Weighted priming loss over `idx`, accumulated into `grad` (zeroed first).
fn priming_pass(
    net: &Mlp,
    key_input: &KeyInputSpec,
    data: &SyntheticDataset,
    idx: &[usize],
    cfg: &PrimeTrainConfig,
    grad: &mut [f64],
) -> Result<PrimingPass> {
    if net.output_dim() != 1 {
        return Err(Error::dim("priming output for scalar targets", 1, net.output_dim()));
    }
    let scale = 1.0 / idx.len() as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    let mut tapes = Vec::with_capacity(idx.len());
    for &i in idx {
        let key = extract_key(key_input, data.inputs().row(i))?;
        let tape = net.forward_tape(&key, &[])?;
        let (l, dl) = cfg.train.loss.value_grad(tape.output()[0], data.targets()[i]);
        total += l;
        net.backward(&tape, &[cfg.priming_weight * dl * scale], grad)?;
        tapes.push(tape);
    }
    Ok(PrimingPass {
        loss: total * scale,
        tapes,
    })
}

fn finite(step: usize, loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence(step));
    }
    Ok(())
}

/// Trains the priming network on its own loss only, with the batch order of
/// [`train_primenet`]. Returns the network and its per-step losses.
pub fn train_priming_alone(model: &PrimeNetModel, data: &SyntheticDataset, cfg: &PrimeTrainConfig) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    check_data(model, data)?;
    let PrimingModule::Learned { net, .. } = &model.priming else {
        return Err(Error::param("priming", "teacher priming has no parameters to train"));
    };
    let steps = match cfg.schedule {
        Schedule::EndToEnd => cfg.train.steps,
        Schedule::TwoStage { priming_steps } => priming_steps,
    };
    let mut net = net.clone();
    let mut params = net.params();
    let mut grad = vec![0.0; params.len()];
    let mut opt = OptState::new(&cfg.train, params.len());
    let mut batches = BatchSchedule::new(data.len(), cfg.train.batch, cfg.train.seed);
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (idx, _) = batches.next_batch();
        let pass = priming_pass(&net, &model.key_input, data, idx, cfg, &mut grad)?;
        finite(step, pass.loss, &grad)?;
        opt.step(&mut params, &grad);
        net.set_params(&params)?;
        trace.push(pass.loss);
    }
    Ok((net, trace))
}

/// [`train_primenet_observed`] without an observer.
pub fn train_primenet(
    model: &PrimeNetModel,
    data: &SyntheticDataset,
    cfg: &PrimeTrainConfig,
) -> Result<(PrimeNetModel, Vec<TraceRow>)> {
    train_primenet_observed(model, data, cfg, &mut |_, _| {})
}

/// Trains both modules. `observer(k, model)` sees the model after `k`
/// updates, for `k = 0` up to the total number of updates.
pub fn train_primenet_observed(
    model: &PrimeNetModel,
    data: &SyntheticDataset,
    cfg: &PrimeTrainConfig,
    observer: &mut dyn FnMut(usize, &PrimeNetModel),
) -> Result<(PrimeNetModel, Vec<TraceRow>)> {
    cfg.validate()?;
    check_data(model, data)?;
    let mut model = model.clone();
    let (priming_steps, main_steps, joint) = match cfg.schedule {
        Schedule::EndToEnd => (0, cfg.train.steps, true),
        Schedule::TwoStage { priming_steps } => (priming_steps, cfg.train.steps, false),
    };
    let learned = matches!(model.priming, PrimingModule::Learned { .. });
    let mut phi = model.priming_params();
    let mut grad_phi = vec![0.0; phi.len()];
    let mut opt_phi = OptState::new(&cfg.train, phi.len());
    let mut theta = model.main.params();
    let mut grad_theta = vec![0.0; theta.len()];
    let mut opt_theta = OptState::new(&cfg.train, theta.len());
    let mut batches = BatchSchedule::new(data.len(), cfg.train.batch, cfg.train.seed);
    let mut trace = Vec::with_capacity(priming_steps + main_steps);
    observer(0, &model);

    for step in 0..priming_steps + main_steps {
        let (idx, _) = batches.next_batch();
        let train_phi = learned && (joint || step < priming_steps);
        let train_theta = joint || step >= priming_steps;

        let pass = match &model.priming {
            PrimingModule::Learned { net, .. } if train_phi || train_theta => {
                Some(priming_pass(net, &model.key_input, data, idx, cfg, &mut grad_phi)?)
            }
            _ => None,
        };
        if let Some(p) = &pass {
            finite(step, p.loss, &grad_phi)?;
        }
        let mut loss_priming = pass.as_ref().map(|p| p.loss);
        let mut loss_main = None;

        if train_theta {
            let scale = 1.0 / idx.len() as f64;
            grad_theta.iter_mut().for_each(|g| *g = 0.0);
            let mut total = 0.0;
            let mut teacher_total = 0.0;
            for (b, &i) in idx.iter().enumerate() {
                let x = data.inputs().row(i);
                let (mut zeta, raw) = match (&model.priming, &pass) {
                    (PrimingModule::Learned { source, .. }, Some(p)) => {
                        let raw = zeta_from_tape(&p.tapes[b], *source).to_vec();
                        (raw.clone(), raw)
                    }
                    (PrimingModule::Teacher { teacher }, _) => {
                        let z = teacher.apply(&extract_key(&model.key_input, x)?);
                        if z.len() == 1 {
                            teacher_total += cfg.train.loss.value_grad(z[0], data.targets()[i]).0;
                        }
                        (z.clone(), z)
                    }
                    _ => unreachable!("learned priming always runs its pass when the main module trains"),
                };
                model.zeta_transform.apply(&mut zeta);
                let tape = model.main.forward_tape(x, &zeta)?;
                let (l, dl) = cfg.train.loss.value_grad(tape.output()[0], data.targets()[i]);
                total += l;
                let g = model.main.backward(&tape, &[cfg.main_weight * dl * scale], &mut grad_theta)?;
                if train_phi && !model.stop_gradient {
                    if let (PrimingModule::Learned { net, source }, Some(p)) = (&model.priming, &pass) {
                        let dz: Vec<f64> = g
                            .injected
                            .iter()
                            .zip(&raw)
                            .map(|(&gi, &r)| gi * model.zeta_transform.deriv(r))
                            .collect();
                        let top = match *source {
                            ZetaSource::Output => net.num_layers() - 1,
                            ZetaSource::Hidden { layer } => layer,
                        };
                        net.backward_from(&p.tapes[b], top, &dz, &mut grad_phi)?;
                    }
                }
            }
            let loss = total * scale;
            finite(step, loss, &grad_theta)?;
            loss_main = Some(loss);
            if !learned && model.zeta_dim == 1 {
                loss_priming = Some(teacher_total * scale);
            }
        }

        if train_phi {
            finite(step, 0.0, &grad_phi)?;
            opt_phi.step(&mut phi, &grad_phi);
            if let PrimingModule::Learned { net, .. } = &mut model.priming {
                net.set_params(&phi)?;
            }
        }
        if train_theta {
            opt_theta.step(&mut theta, &grad_theta);
            if theta.iter().any(|p| !p.is_finite()) {
                return Err(Error::Divergence(step));
            }
            model.main.set_params(&theta)?;
        }
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence(step));
        }
        trace.push(TraceRow {
            step,
            loss_priming,
            loss_main,
        });
        observer(step + 1, &model);
    }
    Ok((model, trace))
}

/// Scalar policies evaluated on stacked-history inputs.
pub trait Policy {
    fn input_dim(&self) -> usize;
    fn act(&self, x: &[f64]) -> Result<f64>;
}

impl Policy for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn act(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }
}

impl Policy for TwoLayerNet {
    fn input_dim(&self) -> usize {
        TwoLayerNet::input_dim(self)
    }

    fn act(&self, x: &[f64]) -> Result<f64> {
        self.forward(x)
    }
}

impl Policy for PrimeNetModel {
    fn input_dim(&self) -> usize {
        PrimeNetModel::input_dim(self)
    }

    fn act(&self, x: &[f64]) -> Result<f64> {
        Ok(forward_primed(self, x)?.0[0])
    }
}

/// A network that only sees the key input of the full input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyPolicy {
    pub key_input: KeyInputSpec,
    pub net: Mlp,
}

impl Policy for KeyPolicy {
    fn input_dim(&self) -> usize {
        self.key_input.input_dim()
    }

    fn act(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&extract_key(&self.key_input, x)?)?[0])
    }
}

/// Any closure `Fn(&[f64]) -> f64` with a declared input width.
pub struct FnPolicy<F> {
    pub input_dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> Policy for FnPolicy<F> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn act(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::dim("policy input", self.input_dim, x.len()));
        }
        Ok((self.f)(x))
    }
}

/// Every frame replaced by the newest one.
pub fn repeat_last_frame(x: &[f64], history: usize) -> Result<Vec<f64>> {
    if history == 0 || x.len() % history != 0 {
        return Err(Error::param("history", "input does not split into equal frames"));
    }
    let fd = x.len() / history;
    let last = &x[x.len() - fd..];
    Ok(last.repeat(history))
}

/// Output on the input whose frames all equal the newest frame.
pub fn intervene_history<P: Policy + ?Sized>(model: &P, x: &[f64], history: usize) -> Result<f64> {
    model.act(&repeat_last_frame(x, history)?)
}

/// Outcome of an intervention analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    /// Per-sample output change under the intervention.
    pub effect_values: Vec<f64>,
    pub flip_rate: f64,
    /// Fraction of the counted samples whose expert action is itself below
    /// the threshold.
    pub baseline_flip_rate: f64,
    pub moving: usize,
    pub flipped: usize,
}

/// Flip rate under the repeated-frame intervention.
///
/// Counted samples have a positive previous action and a prediction of
/// magnitude at least `threshold`; flips are counted samples whose
/// prediction drops below `threshold` after the intervention. Effects are
/// `|f(x) - f(do(x))|` over all samples.
pub fn flip_rate<P: Policy + ?Sized>(model: &P, dataset: &SequenceDataset, threshold: f64) -> Result<InterventionReport> {
    flip_rate_samples(model, &dataset.stacked(), threshold)
}

pub fn flip_rate_samples<P: Policy + ?Sized>(
    model: &P,
    samples: &StackedSamples,
    threshold: f64,
) -> Result<InterventionReport> {
    if samples.is_empty() {
        return Err(Error::Empty("flip-rate samples"));
    }
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::param("threshold", "must be positive and finite"));
    }
    let mut effects = Vec::with_capacity(samples.len());
    let (mut moving, mut flipped, mut base) = (0usize, 0usize, 0usize);
    for i in 0..samples.len() {
        let x = samples.inputs.row(i);
        let f = model.act(x)?;
        let g = intervene_history(model, x, samples.history)?;
        effects.push((f - g).abs());
        if samples.prev_actions[i] > 0.0 && f.abs() >= threshold {
            moving += 1;
            if g.abs() < threshold {
                flipped += 1;
            }
            if samples.targets[i].abs() < threshold {
                base += 1;
            }
        }
    }
    if moving == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(InterventionReport {
        effect_values: effects,
        flip_rate: flipped as f64 / moving as f64,
        baseline_flip_rate: base as f64 / moving as f64,
        moving,
        flipped,
    })
}

/// `|f(do(zeta) = a) - f(do(zeta) = b)|` for every row of `inputs`, with
/// constant overrides `a` and `b` on every coordinate.
pub fn zeta_effects(model: &PrimeNetModel, inputs: &Matrix, a: f64, b: f64) -> Result<Vec<f64>> {
    let za = vec![a; model.zeta_dim];
    let zb = vec![b; model.zeta_dim];
    (0..inputs.rows())
        .map(|i| {
            let x = inputs.row(i);
            Ok((intervene_zeta(model, x, &za)?[0] - intervene_zeta(model, x, &zb)?[0]).abs())
        })
        .collect()
}
