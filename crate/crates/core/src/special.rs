//! Special-function helpers: Student-t density/CDF and gamma quantiles.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// Density of the standard Student-t law with `nu` degrees of freedom.
pub fn student_t_pdf(s: f64, nu: f64) -> f64 {
    let ln_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (nu + 1.0) * (1.0 + s * s / nu).ln()).exp()
}

/// CDF of the standard Student-t law via the regularized incomplete beta function.
pub fn student_t_cdf(s: f64, nu: f64) -> f64 {
    if s.is_infinite() {
        return if s > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + s * s));
    if s >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Gamma(shape, rate) density.
pub fn gamma_pdf(y: f64, shape: f64, rate: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    (shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - rate * y).exp()
}

/// Quantile of Gamma(shape, rate) by bisection in log y on the regularized
/// incomplete gamma function. Lower tail probabilities use P, upper use Q,
/// so both tails keep relative accuracy.
pub fn gamma_quantile(shape: f64, rate: f64, prob: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "probability must lie in (0, 1)");
    let upper = prob > 0.5;
    let target = if upper { 1.0 - prob } else { prob };
    // g(t) increases in t = ln(rate * y) for the lower tail, decreases for the upper.
    let g = |t: f64| {
        let x = t.exp();
        if upper {
            gamma_ur(shape, x)
        } else {
            gamma_lr(shape, x)
        }
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let below = |v: f64| if upper { v > target } else { v < target };
    while !below(g(lo)) {
        lo *= 2.0;
    }
    while below(g(hi)) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if below(g(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    (0.5 * (lo + hi)).exp() / rate
}
