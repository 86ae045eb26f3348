//! Seeded synthetic datasets: the 1-D polynomial regression pair, linear
//! data with a prescribed covariance, spurious-feature classification and
//! smooth-expert action sequences.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eigen, Matrix};
use crate::math;
use crate::rng::{normal, normal_vec, sign, stream, uniform, Stream, StreamRng};
use rand::Rng;

/// Training interval of the toy regression task.
pub const TOY_TRAIN_INTERVAL: Interval = Interval { lo: 0.0, hi: 1.0 };
/// Shifted evaluation interval of the toy regression task.
pub const TOY_OOD_INTERVAL: Interval = Interval { lo: 1.0, hi: 2.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InDistribution,
    OutOfDistribution,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::InDistribution => "in_distribution",
            Region::OutOfDistribution => "out_of_distribution",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFn {
    F1,
    F2,
}

impl ToyFn {
    /// `1.5 x^5 + 2x` for f1, `1.5 x^4 + 2x` for f2.
    pub fn eval(self, x: f64) -> f64 {
        let x2 = x * x;
        match self {
            ToyFn::F1 => 1.5 * x2 * x2 * x + 2.0 * x,
            ToyFn::F2 => 1.5 * x2 * x2 + 2.0 * x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorId {
    ToyF1,
    ToyF2,
    SubgaussianLinear,
    ShortcutClassification,
    Copycat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::param("region", "interval must be finite with lo <= hi"));
        }
        Ok(Self { lo, hi })
    }

    fn contains(&self, other: &Interval) -> bool {
        other.lo >= self.lo && other.hi <= self.hi
    }
}

/// Inputs, targets and provenance of a generated sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    inputs: Matrix,
    targets: Vec<f64>,
    region: Region,
    generator: GeneratorId,
    seed: u64,
}

impl SyntheticDataset {
    pub fn new(
        inputs: Matrix,
        targets: Vec<f64>,
        region: Region,
        generator: GeneratorId,
        seed: u64,
    ) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(Error::dim("targets per input row", inputs.rows(), targets.len()));
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            inputs,
            targets,
            region,
            generator,
            seed,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn generator(&self) -> GeneratorId {
        self.generator
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }
}

/// `n` points uniform on `region`, targets `f(x) + N(0, noise^2)`.
///
/// Intervals inside the training interval `[0, 1]` are tagged
/// in-distribution, anything else out-of-distribution.
pub fn gen_toy_regression(
    n: usize,
    region: Interval,
    fn_id: ToyFn,
    noise: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::Empty("toy regression with n = 0"));
    }
    check_noise(noise)?;
    let mut xr = stream(seed, Stream::Inputs);
    let mut er = stream(seed, Stream::Noise);
    let xs: Vec<f64> = (0..n).map(|_| uniform(&mut xr, region.lo, region.hi)).collect();
    let ys = xs.iter().map(|&x| fn_id.eval(x) + noise * normal(&mut er)).collect();
    toy_dataset(xs, ys, region, fn_id, seed)
}

/// Evaluation grid: `points` evenly spaced values covering `region`
/// including both endpoints, targets `f(x) + N(0, noise^2)`. The noise comes
/// from the evaluation stream, so grids for f1 and f2 with the same seed
/// share their noise draws.
pub fn gen_toy_grid(
    points: usize,
    region: Interval,
    fn_id: ToyFn,
    noise: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if points == 0 {
        return Err(Error::Empty("evaluation grid with 0 points"));
    }
    check_noise(noise)?;
    let xs = linspace(region.lo, region.hi, points);
    let mut er = stream(seed, Stream::Eval);
    let ys = xs.iter().map(|&x| fn_id.eval(x) + noise * normal(&mut er)).collect();
    toy_dataset(xs, ys, region, fn_id, seed)
}

/// Evenly spaced points with both endpoints included exactly.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            let mut xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
            xs[points - 1] = hi;
            xs
        }
    }
}

fn toy_dataset(
    xs: Vec<f64>,
    ys: Vec<f64>,
    region: Interval,
    fn_id: ToyFn,
    seed: u64,
) -> Result<SyntheticDataset> {
    let tag = if TOY_TRAIN_INTERVAL.contains(&region) {
        Region::InDistribution
    } else {
        Region::OutOfDistribution
    };
    let generator = match fn_id {
        ToyFn::F1 => GeneratorId::ToyF1,
        ToyFn::F2 => GeneratorId::ToyF2,
    };
    let n = xs.len();
    SyntheticDataset::new(Matrix::new(n, 1, xs)?, ys, tag, generator, seed)
}

fn check_noise(noise: f64) -> Result<()> {
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::param("noise", "must be finite and >= 0"));
    }
    Ok(())
}

/// Linear teacher `y = x^T beta* + eps` with `x = Sigma^{1/2} u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGroundTruth {
    beta_star: Vec<f64>,
    covariance: Matrix,
    noise_scale: f64,
}

impl LinearGroundTruth {
    /// Validates that the covariance is symmetric PSD with trace `d`.
    pub fn new(beta_star: Vec<f64>, covariance: Matrix, noise_scale: f64) -> Result<Self> {
        let d = beta_star.len();
        if d == 0 {
            return Err(Error::Empty("linear ground truth with d = 0"));
        }
        if covariance.rows() != d || covariance.cols() != d {
            return Err(Error::dim("covariance size", d, covariance.rows()));
        }
        if let Some(i) = beta_star.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        check_noise(noise_scale)?;
        let eig = sym_eigen(&covariance)?;
        if eig.min_eigenvalue() < -1e-10 * eig.max_eigenvalue().abs().max(1.0) {
            return Err(Error::NotPsd(eig.min_eigenvalue()));
        }
        let tr = covariance.trace();
        if (tr - d as f64).abs() > 1e-9 * d as f64 {
            return Err(Error::param("covariance", "trace must equal the dimension"));
        }
        Ok(Self {
            beta_star,
            covariance,
            noise_scale,
        })
    }

    /// Like [`LinearGroundTruth::new`], rescaling the covariance to trace `d`.
    pub fn normalized(beta_star: Vec<f64>, covariance: Matrix, noise_scale: f64) -> Result<Self> {
        let tr = covariance.trace();
        if !(tr > 0.0) {
            return Err(Error::param("covariance", "trace must be positive"));
        }
        let cov = covariance.scale(beta_star.len() as f64 / tr);
        Self::new(beta_star, cov, noise_scale)
    }

    pub fn isotropic(beta_star: Vec<f64>, noise_scale: f64) -> Result<Self> {
        let d = beta_star.len();
        Self::new(beta_star, Matrix::identity(d), noise_scale)
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn dim(&self) -> usize {
        self.beta_star.len()
    }

    /// Symmetric square root of the covariance.
    pub fn covariance_sqrt(&self) -> Result<Matrix> {
        let eig = sym_eigen(&self.covariance)?;
        let d = self.dim();
        Ok(Matrix::from_fn(d, d, |i, j| {
            (0..d)
                .map(|k| {
                    eig.vectors.get(i, k) * math::sqrt(eig.values[k].max(0.0)) * eig.vectors.get(j, k)
                })
                .sum()
        }))
    }
}

/// `n` samples of `x = Sigma^{1/2} u`, `u ~ N(0, I_d)`, `y = x^T beta* + eps`.
pub fn gen_subgaussian_linear(
    n: usize,
    d: usize,
    truth: &LinearGroundTruth,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::Empty("linear data with n = 0"));
    }
    if d != truth.dim() {
        return Err(Error::dim("ground truth dimension", d, truth.dim()));
    }
    let root = truth.covariance_sqrt()?;
    let mut ur = stream(seed, Stream::Inputs);
    let mut er = stream(seed, Stream::Noise);
    let u = Matrix::new(n, d, normal_vec(&mut ur, n * d))?;
    let x = u.matmul(&root)?;
    let y = (0..n)
        .map(|i| dot(x.row(i), &truth.beta_star) + truth.noise_scale * normal(&mut er))
        .collect();
    SyntheticDataset::new(x, y, Region::InDistribution, GeneratorId::SubgaussianLinear, seed)
}

/// Width of the label-determining block in shortcut classification data.
pub const CORE_DIM: usize = 4;
/// Width of the spurious block.
pub const SPURIOUS_DIM: usize = 4;
const SPURIOUS_JITTER: f64 = 0.1;

/// Classification data with a label-aligned spurious block.
///
/// Inputs are `[core | spurious]`. The label is `1{sum(core) > 0}` (targets
/// 0/1). The spurious block is `s * 1 + N(0, 0.1^2)` where `s` is the label
/// sign with probability `spurious_corr` in-distribution and with
/// probability 1/2 out-of-distribution.
pub fn gen_shortcut_classification(
    n: usize,
    spurious_corr: f64,
    region: Region,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::Empty("classification data with n = 0"));
    }
    if !(0.0..=1.0).contains(&spurious_corr) {
        return Err(Error::param("spurious_corr", "must lie in [0, 1]"));
    }
    let p = match region {
        Region::InDistribution => spurious_corr,
        Region::OutOfDistribution => 0.5,
    };
    let mut ir = stream(seed, Stream::Inputs);
    let mut sr = stream(seed, Stream::Signs);
    let mut nr = stream(seed, Stream::Noise);
    let width = CORE_DIM + SPURIOUS_DIM;
    let mut data = Vec::with_capacity(n * width);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let core = normal_vec(&mut ir, CORE_DIM);
        let label = core.iter().sum::<f64>() > 0.0;
        let label_sign = if label { 1.0 } else { -1.0 };
        let aligned = sr.random::<f64>() < p;
        let s = if aligned { label_sign } else { -label_sign };
        data.extend_from_slice(&core);
        for _ in 0..SPURIOUS_DIM {
            data.push(s + SPURIOUS_JITTER * normal(&mut nr));
        }
        targets.push(if label { 1.0 } else { 0.0 });
    }
    SyntheticDataset::new(
        Matrix::new(n, width, data)?,
        targets,
        region,
        GeneratorId::ShortcutClassification,
        seed,
    )
}

/// Accuracy of predicting the label from the sign of the spurious block.
pub fn spurious_accuracy(data: &SyntheticDataset) -> f64 {
    let x = data.inputs();
    let hits = (0..data.len())
        .filter(|&i| {
            let s: f64 = x.row(i)[CORE_DIM..].iter().sum();
            (s > 0.0) == (data.targets()[i] > 0.5)
        })
        .count();
    hits as f64 / data.len() as f64
}

/// Parameters of the smooth-expert sequence generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CopycatConfig {
    pub episodes: usize,
    pub length: usize,
    pub history: usize,
    pub obs_noise: f64,
    /// Mean reversion of the latent drive per step.
    pub ou_theta: f64,
    /// Per-step innovation scale of the latent drive.
    pub ou_sigma: f64,
    /// Per-step probability of a change point (latent redrawn).
    pub jump_rate: f64,
    /// Expert action is `clip(bias + weights . c, 0, 1)`.
    pub action_weights: Vec<f64>,
    pub action_bias: f64,
    /// Ego displacement per unit action.
    pub kappa: f64,
    pub smoothness_bound: f64,
}

impl Default for CopycatConfig {
    fn default() -> Self {
        Self {
            episodes: 40,
            length: 200,
            history: 4,
            obs_noise: 0.5,
            ou_theta: 0.1,
            ou_sigma: 0.02,
            jump_rate: 0.02,
            action_weights: vec![0.5, 0.25],
            action_bias: 0.2,
            kappa: 1.0,
            smoothness_bound: 0.05,
        }
    }
}

/// Episodes of observations and expert actions.
///
/// Each observation row is `[latent + noise, position]` where the position
/// integrates the previous action. `change_points[e][t]` marks steps where
/// the latent state was redrawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    observations: Vec<Matrix>,
    actions: Vec<Matrix>,
    change_points: Vec<Vec<bool>>,
    history_length: usize,
    obs_noise: f64,
    seed: u64,
}

/// Stacked-history samples ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedSamples {
    /// `H` frames per row, oldest first, positions relative to the newest.
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub prev_actions: Vec<f64>,
    pub change_point: Vec<bool>,
    pub frame_dim: usize,
    pub history: usize,
}

impl StackedSamples {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Same samples keeping only the newest frame.
    pub fn last_frame_only(&self) -> StackedSamples {
        let fd = self.frame_dim;
        let start = (self.history - 1) * fd;
        let n = self.len();
        let inputs = Matrix::from_fn(n, fd, |i, j| self.inputs.get(i, start + j));
        StackedSamples {
            inputs,
            targets: self.targets.clone(),
            prev_actions: self.prev_actions.clone(),
            change_point: self.change_point.clone(),
            frame_dim: fd,
            history: 1,
        }
    }

    pub fn to_dataset(&self, seed: u64) -> Result<SyntheticDataset> {
        SyntheticDataset::new(
            self.inputs.clone(),
            self.targets.clone(),
            Region::InDistribution,
            GeneratorId::Copycat,
            seed,
        )
    }
}

impl SequenceDataset {
    pub fn new(
        observations: Vec<Matrix>,
        actions: Vec<Matrix>,
        change_points: Vec<Vec<bool>>,
        history_length: usize,
        obs_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        if observations.len() != actions.len() || observations.len() != change_points.len() {
            return Err(Error::dim("episodes", observations.len(), actions.len()));
        }
        for ((o, a), c) in observations.iter().zip(&actions).zip(&change_points) {
            if o.rows() != a.rows() || o.rows() != c.len() {
                return Err(Error::dim("episode length", o.rows(), a.rows()));
            }
        }
        Ok(Self {
            observations,
            actions,
            change_points,
            history_length,
            obs_noise,
            seed,
        })
    }

    pub fn observations(&self) -> &[Matrix] {
        &self.observations
    }

    pub fn actions(&self) -> &[Matrix] {
        &self.actions
    }

    pub fn change_points(&self) -> &[Vec<bool>] {
        &self.change_points
    }

    pub fn history_length(&self) -> usize {
        self.history_length
    }

    pub fn obs_noise(&self) -> f64 {
        self.obs_noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn episodes(&self) -> usize {
        self.observations.len()
    }

    pub fn frame_dim(&self) -> usize {
        self.observations.first().map(|o| o.cols()).unwrap_or(0)
    }

    /// Mean `|a_t - a_{t-1}|` over all episodes (first action coordinate).
    pub fn mean_abs_increment(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in &self.actions {
            for t in 1..a.rows() {
                sum += (a.get(t, 0) - a.get(t - 1, 0)).abs();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn max_action(&self) -> f64 {
        self.actions
            .iter()
            .flat_map(|a| a.as_slice().iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Stacks `H` consecutive frames per sample for every `t >= H` (so the
    /// previous action is always defined). Position coordinates (the last
    /// column of each frame) are made relative to the newest frame.
    pub fn stacked(&self) -> StackedSamples {
        let h = self.history_length;
        let fd = self.frame_dim();
        let mut data = Vec::new();
        let mut targets = Vec::new();
        let mut prev = Vec::new();
        let mut cps = Vec::new();
        for ((obs, act), cp) in self.observations.iter().zip(&self.actions).zip(&self.change_points) {
            for t in h.max(1)..obs.rows() {
                let now_pos = obs.get(t, fd - 1);
                for k in (t + 1 - h)..=t {
                    let row = obs.row(k);
                    data.extend_from_slice(&row[..fd - 1]);
                    data.push(row[fd - 1] - now_pos);
                }
                targets.push(act.get(t, 0));
                prev.push(act.get(t - 1, 0));
                cps.push(cp[t]);
            }
        }
        let n = targets.len();
        StackedSamples {
            inputs: Matrix::new(n, h * fd, data).expect("stacked frames are finite"),
            targets,
            prev_actions: prev,
            change_point: cps,
            frame_dim: fd,
            history: h,
        }
    }
}

/// Smooth-expert sequences with rare change points.
///
/// The latent context `c` (one coordinate per action weight) follows a
/// mean-reverting drive around a regime level; with probability
/// `jump_rate` per step both are redrawn from `N(0, I)`. The expert action
/// is `clip(bias + w . c, 0, 1)` and the ego position integrates the
/// previous action. Observations are `[c + N(0, obs_noise^2), position]`.
pub fn gen_copycat_sequences(cfg: &CopycatConfig, seed: u64) -> Result<SequenceDataset> {
    let k = cfg.action_weights.len();
    if cfg.history < 1 || cfg.length <= cfg.history {
        return Err(Error::param("history", "need length > history >= 1"));
    }
    if cfg.episodes == 0 {
        return Err(Error::Empty("copycat data with 0 episodes"));
    }
    if k == 0 {
        return Err(Error::param("action_weights", "need at least one latent coordinate"));
    }
    check_noise(cfg.obs_noise)?;
    if !(0.0..=1.0).contains(&cfg.jump_rate) || !(0.0..=1.0).contains(&cfg.ou_theta) {
        return Err(Error::param("jump_rate", "rates must lie in [0, 1]"));
    }
    let mut lr = stream(seed, Stream::Latent);
    let mut jr = stream(seed, Stream::Jumps);
    let mut nr = stream(seed, Stream::Noise);
    let action = |c: &[f64]| (cfg.action_bias + dot(&cfg.action_weights, c)).clamp(0.0, 1.0);

    let mut observations = Vec::with_capacity(cfg.episodes);
    let mut actions = Vec::with_capacity(cfg.episodes);
    let mut change_points = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut level = normal_vec(&mut lr, k);
        let mut c = level.clone();
        let mut pos = 0.0;
        let mut prev_a = action(&c);
        let mut obs = Vec::with_capacity(cfg.length * (k + 1));
        let mut acts = Vec::with_capacity(cfg.length);
        let mut cps = Vec::with_capacity(cfg.length);
        for t in 0..cfg.length {
            let jumped = t > 0 && jr.random::<f64>() < cfg.jump_rate;
            if jumped {
                level = normal_vec(&mut lr, k);
                c.clone_from(&level);
            } else if t > 0 {
                for j in 0..k {
                    c[j] += cfg.ou_theta * (level[j] - c[j]) + cfg.ou_sigma * normal(&mut lr);
                }
            }
            if t > 0 {
                pos += cfg.kappa * prev_a;
            }
            let a = action(&c);
            for j in 0..k {
                obs.push(c[j] + cfg.obs_noise * normal(&mut nr));
            }
            obs.push(pos);
            acts.push(a);
            cps.push(jumped);
            prev_a = a;
        }
        observations.push(Matrix::new(cfg.length, k + 1, obs)?);
        actions.push(Matrix::new(cfg.length, 1, acts)?);
        change_points.push(cps);
    }
    let data = SequenceDataset::new(observations, actions, change_points, cfg.history, cfg.obs_noise, seed)?;
    let inc = data.mean_abs_increment();
    if inc >= cfg.smoothness_bound {
        return Err(Error::param(
            "smoothness_bound",
            alloc::format!("expert actions not smooth: mean |a_t - a_(t-1)| = {inc}"),
        ));
    }
    Ok(data)
}

/// Draws a random unit vector (used for teachers in theory checks).
pub fn random_unit_vector(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, d);
        let n = crate::linalg::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random sign vector (convenience for tests and teachers).
pub fn random_signs(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| sign(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_endpoints() {
        assert_eq!(ToyFn::F1.eval(1.0), 3.5);
        assert_eq!(ToyFn::F2.eval(2.0), 28.0);
    }

    #[test]
    fn toy_noise_free_targets_are_exact() {
        let d = gen_toy_regression(200, TOY_OOD_INTERVAL, ToyFn::F1, 0.0, 3).unwrap();
        assert_eq!(d.region(), Region::OutOfDistribution);
        for i in 0..d.len() {
            let x = d.inputs().get(i, 0);
            let oracle = 1.5 * x.powi(5) + 2.0 * x;
            assert!((d.targets()[i] - oracle).abs() <= 1e-12);
            assert!((1.0..2.0).contains(&x));
        }
    }

    #[test]
    fn toy_mean_matches_integral() {
        let d = gen_toy_regression(1000, TOY_TRAIN_INTERVAL, ToyFn::F1, 0.1, 0).unwrap();
        assert_eq!(d.region(), Region::InDistribution);
        let mean: f64 = d.targets().iter().sum::<f64>() / 1000.0;
        // Var of 1.5x^5 + 2x under U(0,1) plus the noise variance.
        let ex2 = 2.25 / 11.0 + 2.0 * 1.5 * 2.0 / 7.0 + 4.0 / 3.0;
        let sd = (ex2 - 1.25f64 * 1.25 + 0.01).sqrt();
        assert!((mean - 1.25).abs() < 3.0 * sd / (1000f64).sqrt(), "{mean}");
    }

    #[test]
    fn toy_empty_is_error() {
        assert!(matches!(
            gen_toy_regression(0, TOY_TRAIN_INTERVAL, ToyFn::F1, 0.1, 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn grid_includes_endpoints() {
        let g = gen_toy_grid(512, TOY_OOD_INTERVAL, ToyFn::F2, 0.0, 0).unwrap();
        assert_eq!(g.inputs().get(0, 0), 1.0);
        assert_eq!(g.inputs().get(511, 0), 2.0);
        assert_eq!(g.targets()[511], 28.0);
    }

    #[test]
    fn linear_degenerate_teachers() {
        let t = LinearGroundTruth::isotropic(vec![0.0; 3], 0.0).unwrap();
        let d = gen_subgaussian_linear(20, 3, &t, 1).unwrap();
        assert!(d.targets().iter().all(|&y| y == 0.0));

        let t = LinearGroundTruth::isotropic(vec![1.0, 0.0], 0.0).unwrap();
        let d = gen_subgaussian_linear(20, 2, &t, 1).unwrap();
        for i in 0..20 {
            assert_eq!(d.targets()[i], d.inputs().get(i, 0));
        }
    }

    #[test]
    fn linear_empirical_covariance() {
        let cov = Matrix::from_fn(10, 10, |i, j| {
            if i == j {
                1.0
            } else {
                0.3f64.powi((i as i32 - j as i32).abs())
            }
        });
        let t = LinearGroundTruth::new(vec![0.1; 10], cov.clone(), 0.1).unwrap();
        let d = gen_subgaussian_linear(5000, 10, &t, 2).unwrap();
        let emp = d.inputs().gram_cols().scale(1.0 / 5000.0);
        assert!(emp.sub(&cov).unwrap().frobenius_norm() < 0.2);
    }

    #[test]
    fn linear_noise_uncorrelated_with_inputs() {
        let beta = vec![0.5, -0.2, 0.1, 0.0];
        let t = LinearGroundTruth::isotropic(beta.clone(), 1.0).unwrap();
        let n = 4000;
        let d = gen_subgaussian_linear(n, 4, &t, 9).unwrap();
        let eps: Vec<f64> = (0..n).map(|i| d.targets()[i] - dot(d.inputs().row(i), &beta)).collect();
        for j in 0..4 {
            let col = d.inputs().column(j);
            let corr = pearson(&col, &eps);
            assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "coordinate {j}: {corr}");
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ground_truth_validation() {
        assert!(matches!(
            LinearGroundTruth::new(vec![1.0, 1.0], Matrix::from_diag(&[3.0, -1.0]), 0.0),
            Err(Error::NotPsd(_))
        ));
        assert!(LinearGroundTruth::new(vec![1.0, 1.0], Matrix::from_diag(&[1.0, 2.0]), 0.0).is_err());
        let t = LinearGroundTruth::normalized(vec![1.0, 1.0], Matrix::from_diag(&[1.0, 2.0]), 0.0).unwrap();
        assert!((t.covariance().trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shortcut_spurious_accuracy() {
        let d = gen_shortcut_classification(2000, 1.0, Region::InDistribution, 0).unwrap();
        assert_eq!(spurious_accuracy(&d), 1.0);
        let n = 4000;
        let d = gen_shortcut_classification(n, 0.5, Region::InDistribution, 1).unwrap();
        assert!((spurious_accuracy(&d) - 0.5).abs() < 3.0 / (n as f64).sqrt());
        let d = gen_shortcut_classification(n, 1.0, Region::OutOfDistribution, 2).unwrap();
        assert!((spurious_accuracy(&d) - 0.5).abs() < 3.0 / (n as f64).sqrt());
        assert!(gen_shortcut_classification(10, 1.5, Region::InDistribution, 0).is_err());
    }

    #[test]
    fn copycat_noise_free_single_frame_determines_action() {
        let cfg = CopycatConfig {
            obs_noise: 0.0,
            history: 1,
            episodes: 3,
            ..CopycatConfig::default()
        };
        let data = gen_copycat_sequences(&cfg, 4).unwrap();
        let s = data.stacked();
        for i in 0..s.len() {
            let x = s.inputs.row(i);
            let a = (cfg.action_bias + dot(&cfg.action_weights, &x[..2])).clamp(0.0, 1.0);
            assert!((a - s.targets[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn copycat_actions_are_mostly_constant() {
        let data = gen_copycat_sequences(&CopycatConfig::default(), 0).unwrap();
        let mut small = 0usize;
        let mut total = 0usize;
        for a in data.actions() {
            for t in 1..a.rows() {
                total += 1;
                if (a.get(t, 0) - a.get(t - 1, 0)).abs() < 0.05 {
                    small += 1;
                }
            }
        }
        assert!(small as f64 / total as f64 >= 0.9);
    }

    #[test]
    fn copycat_previous_action_beats_constant() {
        let s = gen_copycat_sequences(&CopycatConfig::default(), 1).unwrap().stacked();
        let n = s.len() as f64;
        let mean = s.targets.iter().sum::<f64>() / n;
        let mse_const: f64 = s.targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let mse_prev: f64 = s
            .targets
            .iter()
            .zip(&s.prev_actions)
            .map(|(y, p)| (y - p) * (y - p))
            .sum::<f64>()
            / n;
        assert!(mse_prev < mse_const);
    }

    #[test]
    fn copycat_history_reveals_previous_action() {
        let cfg = CopycatConfig::default();
        let s = gen_copycat_sequences(&cfg, 2).unwrap().stacked();
        let fd = s.frame_dim;
        for i in 0..s.len() {
            let x = s.inputs.row(i);
            let newest_pos = x[s.history * fd - 1];
            let prev_pos = x[(s.history - 1) * fd - 1];
            assert_eq!(newest_pos, 0.0);
            assert!((-prev_pos / cfg.kappa - s.prev_actions[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn copycat_rejects_short_episodes() {
        let cfg = CopycatConfig {
            length: 4,
            history: 4,
            ..CopycatConfig::default()
        };
        assert!(gen_copycat_sequences(&cfg, 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_toy_regression(50, TOY_TRAIN_INTERVAL, ToyFn::F2, 0.1, 8).unwrap();
        let b = gen_toy_regression(50, TOY_TRAIN_INTERVAL, ToyFn::F2, 0.1, 8).unwrap();
        assert_eq!(a, b);
        let c = gen_copycat_sequences(&CopycatConfig::default(), 8).unwrap();
        let d = gen_copycat_sequences(&CopycatConfig::default(), 8).unwrap();
        assert_eq!(c, d);
    }
}
