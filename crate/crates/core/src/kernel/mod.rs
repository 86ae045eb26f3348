//! NTK and linear feature maps of the two-layer network, their Gram
//! matrices, and closed-form predictions of full-batch gradient descent on
//! the squared loss.
//!
//! Gradient descent on `L(theta) = (1/(2n)) |Phi theta - Y|^2` from zero
//! with step `lambda` uses the effective step `s = lambda / n`. After `t`
//! steps the train predictions are `[I - (I - s K)^t] Y` with `K = Phi Phi^T`,
//! and every other quantity follows from
//!
//! ```text
//! sum_{j<t} (I - s K)^j s = Q diag(s e(s sigma)) Q^T,   e(x) = (1 - (1 - x)^t) / x,
//! ```
//!
//! so no inverse of `K` is ever formed.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_step_stability, sym_eigen, Matrix, SymmetricEigen};
use crate::math;
use crate::nnet::{Activation, TwoLayerNet};
use crate::rng::{normal, stream, Stream};

mod checks;
pub use checks::*;

/// Relative eigenvalue cutoff below which a Gram matrix counts as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Gaussian moments of an activation: `zeta = E[sigma'(g)]` and
/// `nu_raw = E[g sigma'(g)]` for `g ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationMoments {
    pub activation: Activation,
    pub zeta: f64,
    pub nu_raw: f64,
}

/// Minimum Monte Carlo sample count for activations without a closed form.
pub const MIN_MC_SAMPLES: usize = 100_000;

/// Closed forms for `relu` and `linear`; Monte Carlo otherwise.
pub fn activation_moments(activation: Activation, mc_samples: usize, seed: u64) -> Result<ActivationMoments> {
    let (zeta, nu_raw) = match activation {
        Activation::Relu => (0.5, 1.0 / math::sqrt(2.0 * core::f64::consts::PI)),
        Activation::Linear => (1.0, 0.0),
        Activation::Tanh | Activation::Erf => {
            if mc_samples < MIN_MC_SAMPLES {
                return Err(Error::param("mc_samples", "need at least 100000 samples"));
            }
            let mut rng = stream(seed, Stream::Probe);
            let (mut z, mut nu) = (0.0, 0.0);
            for _ in 0..mc_samples {
                let g = normal(&mut rng);
                let dv = activation.deriv(g);
                z += dv;
                nu += g * dv;
            }
            (z / mc_samples as f64, nu / mc_samples as f64)
        }
    };
    Ok(ActivationMoments {
        activation,
        zeta,
        nu_raw,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Ntk,
    Lin,
}

/// Per-sample feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    input_dim: usize,
    data: Matrix,
}

impl FeatureMatrix {
    /// Checks the width: `d + 1` for linear features, `m d` for NTK
    /// features (`width` is `m`, ignored for linear features).
    pub fn new(kind: FeatureKind, data: Matrix, input_dim: usize, width: usize) -> Result<Self> {
        let expected = match kind {
            FeatureKind::Lin => input_dim + 1,
            FeatureKind::Ntk => input_dim * width,
        };
        if data.cols() != expected {
            return Err(Error::dim("feature width", expected, data.cols()));
        }
        Ok(Self {
            kind,
            input_dim,
            data,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dims(&self) -> usize {
        self.data.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }
}

/// `nu_raw * sqrt(Tr(Sigma^2) / d)`
pub fn nu_constant(moments: &ActivationMoments, covariance: &Matrix) -> f64 {
    let d = covariance.rows() as f64;
    let tr_sq: f64 = covariance.as_slice().iter().map(|v| v * v).sum();
    moments.nu_raw * math::sqrt(tr_sq / d)
}

fn check_covariance(x: &Matrix, covariance: &Matrix) -> Result<()> {
    if !covariance.is_square() {
        return Err(Error::NotSquare {
            rows: covariance.rows(),
            cols: covariance.cols(),
        });
    }
    if x.cols() != covariance.rows() {
        return Err(Error::dim("input width vs covariance", covariance.rows(), x.cols()));
    }
    Ok(())
}

/// Rows `(1/sqrt(d)) [zeta x; nu]`.
pub fn phi_lin(x: &Matrix, moments: &ActivationMoments, covariance: &Matrix) -> Result<FeatureMatrix> {
    check_covariance(x, covariance)?;
    let d = x.cols();
    let c = 1.0 / math::sqrt(d as f64);
    let nu = nu_constant(moments, covariance);
    let data = Matrix::from_fn(x.rows(), d + 1, |i, j| {
        if j < d {
            c * moments.zeta * x.get(i, j)
        } else {
            c * nu
        }
    });
    FeatureMatrix::new(FeatureKind::Lin, data, d, 0)
}

/// Rows are the parameter gradients of `net` at each input.
pub fn phi_ntk(net: &TwoLayerNet, x: &Matrix) -> Result<FeatureMatrix> {
    if x.cols() != net.input_dim() {
        return Err(Error::dim("network input", net.input_dim(), x.cols()));
    }
    let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| net.grad_params(x.row(i))).collect::<Result<_>>()?;
    let data = if rows.is_empty() {
        Matrix::zeros(0, net.width() * net.input_dim())
    } else {
        Matrix::from_rows(&rows)?
    };
    FeatureMatrix::new(FeatureKind::Ntk, data, net.input_dim(), net.width())
}

/// Matrix of feature inner products `a_i . b_j`.
pub fn gram(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<Matrix> {
    if a.kind != b.kind {
        return Err(Error::param("features", "cannot mix NTK and linear features"));
    }
    if a.dims() != b.dims() {
        return Err(Error::dim("feature width", a.dims(), b.dims()));
    }
    a.data.matmul_t(&b.data)
}

/// NTK Gram `phi_ntk(A) phi_ntk(B)^T` without materializing the features:
/// `(1/m) (S_A S_B^T) o (A B^T / d)` with `S[i][r] = |v_r| sigma'(w_r . x_i / sqrt(d))`.
pub fn ntk_gram(net: &TwoLayerNet, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let d = net.input_dim();
    if a.cols() != d || b.cols() != d {
        return Err(Error::dim("network input", d, if a.cols() != d { a.cols() } else { b.cols() }));
    }
    let m = net.width();
    // Mirrored units contribute identical terms: use one copy, counted twice.
    let (units, mult) = if is_mirrored(net) { (m / 2, 2.0) } else { (m, 1.0) };
    let gates = |x: &Matrix| -> Result<Matrix> {
        let pre = net.preactivations(x)?;
        Ok(Matrix::from_fn(x.rows(), units, |i, r| {
            net.signs()[r].abs() * net.activation().deriv(pre.get(i, r))
        }))
    };
    let sa = gates(a)?;
    let same = core::ptr::eq(a, b);
    let sb = if same { sa.clone() } else { gates(b)? };
    let mut k = if same { sa.gram_rows() } else { sa.matmul_t(&sb)? };
    let inner = if same { a.gram_rows() } else { a.matmul_t(b)? };
    let c = mult / (m as f64 * d as f64);
    for (kv, &iv) in k.as_mut_slice().iter_mut().zip(inner.as_slice()) {
        *kv *= c * iv;
    }
    Ok(k)
}

/// Linear-feature Gram `(zeta^2 / d) A B^T + (nu^2 / d) 1 1^T` in closed form.
pub fn lin_gram(a: &Matrix, b: &Matrix, moments: &ActivationMoments, covariance: &Matrix) -> Result<Matrix> {
    check_covariance(a, covariance)?;
    check_covariance(b, covariance)?;
    let d = a.cols() as f64;
    let nu = nu_constant(moments, covariance);
    let z2 = moments.zeta * moments.zeta / d;
    let c = nu * nu / d;
    let mut k = a.matmul_t(b)?;
    for v in k.as_mut_slice() {
        *v = z2 * *v + c;
    }
    Ok(k)
}

fn is_mirrored(net: &TwoLayerNet) -> bool {
    let m = net.width();
    if m % 2 != 0 {
        return false;
    }
    let h = m / 2;
    let (w, v) = (net.weights(), net.signs());
    (0..h).all(|r| w.row(r) == w.row(r + h) && v[r] == -v[r + h])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// More features than samples.
    Overparam,
    /// Fewer features than samples.
    Underparam,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::Overparam => "overparameterized",
            Regime::Underparam => "underparameterized",
        }
    }

    fn check(self, samples: usize, features: usize) -> Result<()> {
        let ok = match self {
            Regime::Overparam => features > samples,
            Regime::Underparam => features < samples,
        };
        if ok {
            return Ok(());
        }
        Err(Error::Regime {
            regime: self.name(),
            requirement: match self {
                Regime::Overparam => "more features than samples",
                Regime::Underparam => "fewer features than samples",
            },
            rows: samples,
            cols: features,
        })
    }
}

/// Step size `lambda`, step count `t` and the `1/n` factor of the mean loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub step_size: f64,
    pub steps: u64,
    pub regime: Regime,
    pub sample_scale: f64,
}

impl TrajectoryConfig {
    /// Mean-loss convention: `sample_scale = 1 / n`.
    pub fn new(step_size: f64, steps: u64, regime: Regime, n: usize) -> Self {
        Self {
            step_size,
            steps,
            regime,
            sample_scale: 1.0 / n as f64,
        }
    }

    /// Effective step `lambda / n`.
    pub fn effective_step(&self) -> f64 {
        self.step_size * self.sample_scale
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }
}

/// `e(x) = (1 - (1 - x)^t) / x` on `(0, 1]`, its limit `t` at 0.
pub fn e_func(x: f64, t: u64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain(x));
    }
    Ok(e_ext(x, t))
}

// e(x) extended to x = 0 (and to tiny negative x from rounding).
pub(crate) fn e_ext(x: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let tf = t as f64;
    if (x * tf).abs() < 1e-8 {
        return tf - 0.5 * tf * (tf - 1.0) * x;
    }
    math::one_minus_geometric(x, t) / x
}

/// `[I - (I - s K)^t] Y`
pub fn predict_train(k: &Matrix, y: &[f64], cfg: &TrajectoryConfig) -> Result<Vec<f64>> {
    let eig = sym_eigen(k)?;
    predict_train_eigen(&eig, y, cfg)
}

/// [`predict_train`] with the eigendecomposition of `K` supplied.
pub fn predict_train_eigen(eig: &SymmetricEigen, y: &[f64], cfg: &TrajectoryConfig) -> Result<Vec<f64>> {
    crate::linalg::poly_step_apply_eigen(eig, cfg.steps, cfg.effective_step(), y)
}

/// Kernel coefficients `alpha = Q diag(s e(s sigma)) Q^T Y`. Train
/// predictions are `K alpha`, test predictions `K_cross alpha`.
pub fn kernel_coefficients(eig: &SymmetricEigen, y: &[f64], cfg: &TrajectoryConfig) -> Result<Vec<f64>> {
    if y.len() != eig.dim() {
        return Err(Error::dim("targets", eig.dim(), y.len()));
    }
    let s = cfg.effective_step();
    check_step_stability(eig, s)?;
    eig.apply_fn(y, |sigma| s * e_ext(s * sigma, cfg.steps))
}

/// Test-region predictions after `t` steps.
///
/// Overparameterized: `K_cross Q diag(s e(s sigma)) Q^T Y`, which equals
/// `K_cross [I - (I - s K)^t] K^{-1} Y` whenever `K` is invertible and stays
/// well defined when it is not.
///
/// Underparameterized: needs the train features `Phi` (`n x p`, `p < n`).
/// With `G = Phi^T Phi = Q diag(sigma) Q^T` the parameters are
/// `theta = Q diag(s e(s sigma)) Q^T Phi^T Y`; the prediction
/// `Phi_Z theta = K_cross alpha` uses
/// `alpha = Phi Q diag(s e(s sigma) / sigma) Q^T Phi^T Y`, which requires `G`
/// to be nonsingular.
pub fn predict_test(
    k_cross: &Matrix,
    k_train: &Matrix,
    features_train: Option<&FeatureMatrix>,
    y: &[f64],
    cfg: &TrajectoryConfig,
) -> Result<Vec<f64>> {
    let n = k_train.rows();
    if k_cross.cols() != n {
        return Err(Error::dim("cross kernel columns", n, k_cross.cols()));
    }
    if y.len() != n {
        return Err(Error::dim("targets", n, y.len()));
    }
    match cfg.regime {
        Regime::Overparam => {
            if let Some(f) = features_train {
                cfg.regime.check(f.rows(), f.dims())?;
            }
            let eig = sym_eigen(k_train)?;
            predict_test_eigen(k_cross, &eig, y, cfg)
        }
        Regime::Underparam => {
            let phi = features_train
                .ok_or_else(|| Error::param("features_train", "required for the underparameterized regime"))?;
            if phi.rows() != n {
                return Err(Error::dim("feature rows", n, phi.rows()));
            }
            cfg.regime.check(phi.rows(), phi.dims())?;
            let s = cfg.effective_step();
            let g = phi.data().gram_cols();
            let eig = sym_eigen(&g)?;
            check_step_stability(&eig, s)?;
            let smax = eig.max_eigenvalue();
            let smin = eig.min_eigenvalue();
            if smin <= RANK_TOL * smax {
                return Err(Error::RankDeficient(smin));
            }
            let pty = phi.data().matvec_t(y)?;
            let c = eig.apply_fn(&pty, |sigma| s * e_ext(s * sigma, cfg.steps) / sigma)?;
            let alpha = phi.data().matvec(&c)?;
            k_cross.matvec(&alpha)
        }
    }
}

/// Overparameterized [`predict_test`] with the eigendecomposition of the
/// train Gram supplied.
pub fn predict_test_eigen(
    k_cross: &Matrix,
    eig: &SymmetricEigen,
    y: &[f64],
    cfg: &TrajectoryConfig,
) -> Result<Vec<f64>> {
    let alpha = kernel_coefficients(eig, y, cfg)?;
    k_cross.matvec(&alpha)
}

/// Parameters after `t` full-batch GD steps from zero on
/// `(1/(2n)) |X theta - Y|^2`.
///
/// Overparameterized (`n < p`): `X^T Q diag(s e(s sigma)) Q^T Y` with
/// `X X^T = Q diag(sigma) Q^T`. Underparameterized (`n > p`):
/// `Q diag(s e(s sigma)) Q^T X^T Y` with `X^T X = Q diag(sigma) Q^T`. Both
/// reduce to `theta = s X^T Y` at `t = 1`.
pub fn gd_trajectory_params(x: &Matrix, y: &[f64], cfg: &TrajectoryConfig) -> Result<Vec<f64>> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::dim("targets", n, y.len()));
    }
    cfg.regime.check(n, p)?;
    let s = cfg.effective_step();
    match cfg.regime {
        Regime::Overparam => {
            let eig = sym_eigen(&x.gram_rows())?;
            check_step_stability(&eig, s)?;
            let alpha = eig.apply_fn(y, |sigma| s * e_ext(s * sigma, cfg.steps))?;
            x.matvec_t(&alpha)
        }
        Regime::Underparam => {
            let eig = sym_eigen(&x.gram_cols())?;
            check_step_stability(&eig, s)?;
            let xty = x.matvec_t(y)?;
            eig.apply_fn(&xty, |sigma| s * e_ext(s * sigma, cfg.steps))
        }
    }
}

/// Spectral gaps between the NTK and linear kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelGap {
    /// `|K_ntk(X, X) - K_lin(X, X)|`
    pub train_gap: f64,
    /// `|K_ntk(Z, X) - K_lin(Z, X)|`
    pub cross_gap: f64,
}

pub fn kernel_gap(
    net: &TwoLayerNet,
    x: &Matrix,
    z: &Matrix,
    moments: &ActivationMoments,
    covariance: &Matrix,
) -> Result<KernelGap> {
    let train = ntk_gram(net, x, x)?.sub(&lin_gram(x, x, moments, covariance)?)?;
    let cross = ntk_gram(net, z, x)?.sub(&lin_gram(z, x, moments, covariance)?)?;
    Ok(KernelGap {
        train_gap: crate::linalg::spectral_norm(&train)?,
        cross_gap: crate::linalg::spectral_norm(&cross)?,
    })
}
