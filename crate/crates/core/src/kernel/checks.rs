// Seeded numerical checks: the e(x) slope bound, X^T X concentration, the
// NTK/linear kernel gap across dimensions, closed-form vs iterative GD, and
// the in/out-of-distribution behaviour of a kernel-trained network.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::*;
use crate::linalg::{axpy, dot, norm, sym_eigenvalues};
use crate::rng::{derive_seed, normal_vec, StreamRng};
use crate::synth::{gen_subgaussian_linear, random_unit_vector, LinearGroundTruth};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub t: u64,
    pub grid: usize,
    pub max_slope: f64,
    /// `t (t - 1)`
    pub bound: f64,
    pub within_bound: bool,
}

/// Largest finite-difference slope of `e(., t)` over `grid` equal steps of
/// `[0, 1]` (using the limit value at 0).
pub fn e_lipschitz_check(t: u64, grid: usize) -> Result<LipschitzReport> {
    if t < 1 {
        return Err(Error::param("t", "need t >= 1"));
    }
    if grid < 1 {
        return Err(Error::param("grid", "need at least one interval"));
    }
    let h = 1.0 / grid as f64;
    let mut prev = e_ext(0.0, t);
    let mut max_slope = 0.0f64;
    for k in 1..=grid {
        let x = if k == grid { 1.0 } else { k as f64 * h };
        let cur = e_ext(x, t);
        max_slope = max_slope.max((cur - prev).abs() / h);
        prev = cur;
    }
    let tf = t as f64;
    let bound = tf * (tf - 1.0);
    Ok(LipschitzReport {
        t,
        grid,
        max_slope,
        bound,
        within_bound: max_slope <= bound * (1.0 + 1e-6),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub d: usize,
    /// `(min, max)` eigenvalue of `X^T X / n` per trial.
    pub trials: Vec<(f64, f64)>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub range_min: f64,
    pub range_max: f64,
    /// Fraction of trials with both extremes in `[sigma_min / 2, 2 sigma_max]`.
    pub fraction_within: f64,
}

/// Draws `trials` design matrices `X = U Sigma^{1/2}` and records the
/// extreme eigenvalues of `X^T X / n`.
pub fn xtx_concentration_check(
    n: usize,
    d: usize,
    covariance: &Matrix,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if d == 0 || trials == 0 {
        return Err(Error::Empty("concentration check needs d >= 1 and trials >= 1"));
    }
    if n < 20 * d {
        return Err(Error::param("n", "concentration check needs n >= 20 d"));
    }
    if covariance.rows() != d || covariance.cols() != d {
        return Err(Error::dim("covariance size", d, covariance.rows()));
    }
    let cov_eig = sym_eigenvalues(covariance)?;
    let (sigma_max, sigma_min) = (cov_eig[0], cov_eig[d - 1]);
    if sigma_min < 0.0 {
        return Err(Error::NotPsd(sigma_min));
    }
    let truth = LinearGroundTruth::normalized(vec![0.0; d], covariance.clone(), 0.0)?;
    let rescale = covariance.trace() / d as f64;
    let mut out = Vec::with_capacity(trials);
    let mut within = 0usize;
    for trial in 0..trials {
        let data = gen_subgaussian_linear(n, d, &truth, derive_seed(seed, trial as u64))?;
        let g = data.inputs().gram_cols().scale(rescale / n as f64);
        let ev = sym_eigenvalues(&g)?;
        let (lo, hi) = (ev[d - 1], ev[0]);
        if lo >= 0.5 * sigma_min && hi <= 2.0 * sigma_max {
            within += 1;
        }
        out.push((lo, hi));
    }
    let range_min = out.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let range_max = out.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConcentrationReport {
        n,
        d,
        trials: out,
        sigma_min,
        sigma_max,
        range_min,
        range_max,
        fraction_within: within as f64 / trials as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapLadderConfig {
    pub dims: Vec<usize>,
    pub n: usize,
    /// Width `m = ceil(d^width_exponent)`, rounded up to even.
    pub width_exponent: f64,
    pub seeds: Vec<u64>,
    pub activation: Activation,
}

impl Default for GapLadderConfig {
    fn default() -> Self {
        Self {
            dims: vec![32, 64, 128, 256],
            n: 512,
            width_exponent: 1.2,
            seeds: vec![0, 1, 2, 3, 4],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapLadderRow {
    pub d: usize,
    pub m: usize,
    /// `train_gap / n` per seed.
    pub normalized_train_gaps: Vec<f64>,
    /// `cross_gap / n` per seed.
    pub normalized_cross_gaps: Vec<f64>,
    pub median_train: f64,
    pub median_cross: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapLadderReport {
    pub rows: Vec<GapLadderRow>,
    pub strictly_decreasing: bool,
}

/// `ceil(d^exponent)`, rounded up to an even width.
pub fn ladder_width(d: usize, exponent: f64) -> usize {
    let m = math::ceil(math::pow(d as f64, exponent)) as usize;
    m + m % 2
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Kernel gaps on isotropic Gaussian data for each dimension of the ladder.
pub fn kernel_gap_ladder(cfg: &GapLadderConfig) -> Result<GapLadderReport> {
    if cfg.dims.is_empty() || cfg.seeds.is_empty() || cfg.n == 0 {
        return Err(Error::Empty("gap ladder needs dims, seeds and n >= 1"));
    }
    let moments = activation_moments(cfg.activation, MIN_MC_SAMPLES * 10, 0)?;
    let mut rows = Vec::with_capacity(cfg.dims.len());
    for &d in &cfg.dims {
        let m = ladder_width(d, cfg.width_exponent);
        let cov = Matrix::identity(d);
        let mut train = Vec::with_capacity(cfg.seeds.len());
        let mut cross = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let seed = derive_seed(seed, d as u64);
            let net = TwoLayerNet::symmetric_init(d, m, cfg.activation, seed)?;
            let x = gaussian_matrix(&mut stream(seed, Stream::Inputs), cfg.n, d)?;
            let z = gaussian_matrix(&mut stream(seed, Stream::Eval), cfg.n, d)?;
            let gap = kernel_gap(&net, &x, &z, &moments, &cov)?;
            train.push(gap.train_gap / cfg.n as f64);
            cross.push(gap.cross_gap / cfg.n as f64);
        }
        rows.push(GapLadderRow {
            d,
            m,
            median_train: median(&train),
            median_cross: median(&cross),
            normalized_train_gaps: train,
            normalized_cross_gaps: cross,
        });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].median_train < w[0].median_train);
    Ok(GapLadderReport {
        rows,
        strictly_decreasing,
    })
}

fn gaussian_matrix(rng: &mut StreamRng, n: usize, d: usize) -> Result<Matrix> {
    Matrix::new(n, d, normal_vec(rng, n * d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheckReport {
    pub instances: usize,
    pub steps: Vec<u64>,
    /// Largest `|theta_closed - theta_gd| / |theta_gd|` per regime.
    pub max_rel_dev_overparam: f64,
    pub max_rel_dev_underparam: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `t` explicit full-batch GD steps from zero (the reference for
/// [`gd_trajectory_params`]).
pub fn iterate_gd(x: &Matrix, y: &[f64], s: f64, t: u64) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; x.cols()];
    for _ in 0..t {
        let pred = x.matvec(&theta)?;
        let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let g = x.matvec_t(&r)?;
        axpy(s, &g, &mut theta);
    }
    Ok(theta)
}

/// Compares the closed form with explicit GD on random instances of both
/// regimes. Shapes are drawn from `[2, 12] x [13, 24]` (and transposed),
/// step `s = 0.9 / lambda_max`.
pub fn trajectory_equivalence_check(
    instances: usize,
    steps: &[u64],
    tolerance: f64,
    seed: u64,
) -> Result<TrajectoryCheckReport> {
    use rand::Rng;
    let mut worst = [0.0f64; 2];
    for i in 0..instances {
        let mut rng = stream(derive_seed(seed, i as u64), Stream::Trial(i as u32));
        let small = rng.random_range(2..=12usize);
        let large = rng.random_range(13..=24usize);
        for (slot, regime) in [(0, Regime::Overparam), (1, Regime::Underparam)] {
            let (n, p) = match regime {
                Regime::Overparam => (small, large),
                Regime::Underparam => (large, small),
            };
            let x = gaussian_matrix(&mut rng, n, p)?;
            let y = normal_vec(&mut rng, n);
            let lmax = sym_eigenvalues(&x.gram_cols())?[0];
            let s = 0.9 / lmax;
            for &t in steps {
                let cfg = TrajectoryConfig {
                    step_size: s * n as f64,
                    steps: t,
                    regime,
                    sample_scale: 1.0 / n as f64,
                };
                let closed = gd_trajectory_params(&x, &y, &cfg)?;
                let iter = iterate_gd(&x, &y, s, t)?;
                let diff: Vec<f64> = closed.iter().zip(&iter).map(|(a, b)| a - b).collect();
                let rel = norm(&diff) / norm(&iter).max(f64::MIN_POSITIVE);
                worst[slot] = worst[slot].max(rel);
            }
        }
    }
    Ok(TrajectoryCheckReport {
        instances,
        steps: steps.to_vec(),
        max_rel_dev_overparam: worst[0],
        max_rel_dev_underparam: worst[1],
        tolerance,
        passed: worst[0] <= tolerance && worst[1] <= tolerance,
    })
}

/// Setup of the in/out-of-distribution check for a kernel-trained network.
///
/// Train inputs are standard Gaussian conditioned on `|x| <= r_in` with
/// `r_in = in_radius sqrt(d)`; test inputs lie on the sphere of radius
/// `r_out = out_radius sqrt(d)`. The teacher is `h(x) = x . beta*` with a
/// random unit `beta*` (scaled by `teacher_scale`), labels `h(x) + eps`.
/// The alternative is `s = h + bump_height * rho(|x|)` with `rho` a smoothstep
/// from 0 at `r_in` to 1 at `r_out`, so `s = h` on the train support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremConfig {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub noise: f64,
    pub n_test: usize,
    pub in_radius: f64,
    pub out_radius: f64,
    pub teacher_scale: f64,
    pub bump_height: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n: 2048,
            m: 1024,
            alpha: 0.2,
            noise: 0.1,
            n_test: 512,
            in_radius: 1.15,
            out_radius: 1.5,
            teacher_scale: 1.0,
            bump_height: 1.0,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub seed: u64,
    /// `ceil(d^{1 + alpha/3})`
    pub steps: u64,
    pub step_size: f64,
    /// `(t, RMS train residual |f - y|)` for increasing `t`.
    pub train_residuals: Vec<(u64, f64)>,
    pub train_residual: f64,
    /// RMS of `f - h` on the test shell.
    pub ood_dist_h: f64,
    /// RMS of `f - s` on the test shell.
    pub ood_dist_s: f64,
    /// RMS of `s - h` on the test shell.
    pub ood_separation: f64,
    /// RMS of `f - s` on the train inputs.
    pub train_dist_s: f64,
    /// RMS of `f_lin - h` on the test shell for the linear-feature model.
    pub lin_ood_dist_h: f64,
    /// RMS of `f_ntk - f_lin` on the test shell.
    pub ntk_lin_ood_gap: f64,
    /// Train residual below `2 noise + 0.1`.
    pub small_train_error: bool,
    /// `ood_dist_h < 0.5 ood_dist_s`.
    pub closer_to_h: bool,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    math::sqrt(s / a.len().max(1) as f64)
}

pub fn theorem_c1c2_check(cfg: &TheoremConfig) -> Result<TheoremReport> {
    let (d, n, m) = (cfg.d, cfg.n, cfg.m);
    if !(cfg.alpha > 0.0 && cfg.alpha < 0.25) {
        return Err(Error::param("alpha", "need 0 < alpha < 1/4"));
    }
    if d == 0 || n == 0 || cfg.n_test == 0 {
        return Err(Error::Empty("theorem check needs d, n, n_test >= 1"));
    }
    if (m as f64) < math::pow(d as f64, 1.0 + cfg.alpha) {
        return Err(Error::param("m", "need m >= d^(1 + alpha)"));
    }
    if !(cfg.out_radius > cfg.in_radius && cfg.in_radius > 0.0) {
        return Err(Error::param("out_radius", "need out_radius > in_radius > 0"));
    }
    let sqrt_d = math::sqrt(d as f64);
    let (r_in, r_out) = (cfg.in_radius * sqrt_d, cfg.out_radius * sqrt_d);
    let seed = cfg.seed;

    let beta: Vec<f64> = random_unit_vector(&mut stream(seed, Stream::Signs), d)
        .into_iter()
        .map(|b| b * cfg.teacher_scale)
        .collect();
    let h = |x: &[f64]| dot(x, &beta);
    let s_fn = |x: &[f64]| h(x) + cfg.bump_height * smoothstep((norm(x) - r_in) / (r_out - r_in));

    let mut xr = stream(seed, Stream::Inputs);
    let mut xdata = Vec::with_capacity(n * d);
    let mut accepted = 0;
    while accepted < n {
        let u = normal_vec(&mut xr, d);
        if norm(&u) <= r_in {
            xdata.extend_from_slice(&u);
            accepted += 1;
        }
    }
    let x = Matrix::new(n, d, xdata)?;
    let mut zr = stream(seed, Stream::Eval);
    let mut zdata = Vec::with_capacity(cfg.n_test * d);
    for _ in 0..cfg.n_test {
        let u = random_unit_vector(&mut zr, d);
        zdata.extend(u.into_iter().map(|v| v * r_out));
    }
    let z = Matrix::new(cfg.n_test, d, zdata)?;
    let mut er = stream(seed, Stream::Noise);
    let y: Vec<f64> = (0..n).map(|i| h(x.row(i)) + cfg.noise * normal(&mut er)).collect();

    let net = TwoLayerNet::symmetric_init(d, m, cfg.activation, seed)?;
    let k = ntk_gram(&net, &x, &x)?;
    let eig = sym_eigen(&k)?;
    let step_size = n as f64 / eig.max_eigenvalue();
    let t_final = math::ceil(math::pow(d as f64, 1.0 + cfg.alpha / 3.0)) as u64;
    let base = TrajectoryConfig::new(step_size, t_final, Regime::Overparam, n);

    let mut train_residuals = Vec::new();
    let mut ts: Vec<u64> = vec![(d as u64).min(t_final), (d as u64 + t_final) / 2, t_final];
    ts.dedup();
    for &t in &ts {
        let pred = predict_train_eigen(&eig, &y, &base.with_steps(t))?;
        train_residuals.push((t, rms(&pred, &y)));
    }
    let train_pred = predict_train_eigen(&eig, &y, &base)?;
    let train_residual = rms(&train_pred, &y);
    let s_train: Vec<f64> = (0..n).map(|i| s_fn(x.row(i))).collect();

    let k_cross = ntk_gram(&net, &z, &x)?;
    let f_ood = predict_test_eigen(&k_cross, &eig, &y, &base)?;
    let h_ood: Vec<f64> = (0..cfg.n_test).map(|i| h(z.row(i))).collect();
    let s_ood: Vec<f64> = (0..cfg.n_test).map(|i| s_fn(z.row(i))).collect();
    let ood_dist_h = rms(&f_ood, &h_ood);
    let ood_dist_s = rms(&f_ood, &s_ood);

    // The same trajectory with linear features (underparameterized: d + 1 < n).
    let moments = activation_moments(cfg.activation, MIN_MC_SAMPLES * 10, seed)?;
    let cov = Matrix::identity(d);
    let phi_x = phi_lin(&x, &moments, &cov)?;
    let phi_z = phi_lin(&z, &moments, &cov)?;
    let k_lin = gram(&phi_x, &phi_x)?;
    let lin_lmax = sym_eigenvalues(&k_lin)?[0];
    let lin_cfg = TrajectoryConfig::new(n as f64 / lin_lmax, t_final, Regime::Underparam, n);
    let f_lin = predict_test(&gram(&phi_z, &phi_x)?, &k_lin, Some(&phi_x), &y, &lin_cfg)?;

    Ok(TheoremReport {
        d,
        n,
        m,
        alpha: cfg.alpha,
        seed,
        steps: t_final,
        step_size,
        train_residuals,
        train_residual,
        ood_dist_h,
        ood_dist_s,
        ood_separation: rms(&s_ood, &h_ood),
        train_dist_s: rms(&train_pred, &s_train),
        lin_ood_dist_h: rms(&f_lin, &h_ood),
        ntk_lin_ood_gap: rms(&f_ood, &f_lin),
        small_train_error: train_residual < 2.0 * cfg.noise + 0.1,
        closer_to_h: ood_dist_h < 0.5 * ood_dist_s,
    })
}
