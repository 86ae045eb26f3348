// Thin wrappers over libm so the numerical code reads like std code.

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub(crate) fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub(crate) fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

#[inline]
pub(crate) fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub(crate) fn exp_m1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// `1 - (1 - x)^t`, accurate for small `x`.
pub(crate) fn one_minus_geometric(x: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    if x >= 1.0 {
        // (1 - x)^t with x = 1 is exactly zero; x > 1 is excluded by callers.
        let base = 1.0 - x;
        return 1.0 - pow(base, t as f64);
    }
    -exp_m1(t as f64 * ln_1p(-x))
}
