//! Scalar special functions shared by the threshold families.

use std::f64::consts::FRAC_1_SQRT_2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal cdf through `erfc`, accurate deep into both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard logistic cdf `G(u) = 1 / (1 + e^{-u})`.
pub fn logistic_cdf(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Standard logistic density `g(u) = G(u)(1 - G(u))`.
pub fn logistic_pdf(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `ln(1 + e^u)`, split at zero so neither branch overflows.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `ln G(u)`.
pub fn ln_logistic_cdf(u: f64) -> f64 {
    -softplus(-u)
}
