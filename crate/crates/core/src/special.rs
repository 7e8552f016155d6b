//! Normal and gamma distribution functions used by the samplers and the
//! closed-form conditional rules.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Relative tolerance of the numerical gamma inversion.
pub const GAMMA_QUANTILE_RTOL: f64 = 1e-10;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile; `p` must lie in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Regularized lower incomplete gamma `P(shape, x)` for unit rate.
pub fn gamma_cdf(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(shape, x)
    }
}

fn gamma_sf(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(shape, x)
    }
}

fn gamma_pdf(shape: f64, x: f64) -> f64 {
    ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp()
}

/// Unit-rate gamma quantile at probability `Φ(z)`.
///
/// Taking the normal score instead of the probability keeps the upper tail
/// accurate: for `z > 0` the equation is solved on the survival function
/// with `1 - Φ(z) = Φ(-z)`, which never rounds to zero prematurely.
pub fn gamma_quantile_from_normal(shape: f64, z: f64) -> f64 {
    let upper = z > 0.0;
    let target = if upper { std_normal_cdf(-z) } else { std_normal_cdf(z) };
    if target <= 0.0 {
        return if upper { f64::INFINITY } else { 0.0 };
    }
    // Wilson-Hilferty start.
    let c = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * shape.sqrt());
    let mut x = shape * c * c * c;
    if !(x > 0.0 && x.is_finite()) {
        let p = std_normal_cdf(z);
        x = ((p.ln() + ln_gamma(shape + 1.0)) / shape).exp();
    }
    let residual = |x: f64| {
        if upper {
            target - gamma_sf(shape, x)
        } else {
            gamma_cdf(shape, x) - target
        }
    };
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..200 {
        let f = residual(x);
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = gamma_pdf(shape, x);
        let mut next = x - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x };
        }
        if (next - x).abs() <= GAMMA_QUANTILE_RTOL * next.abs() {
            return next;
        }
        x = next;
    }
    x
}

/// Unit-rate gamma quantile at probability `p` in (0, 1).
pub fn gamma_quantile(shape: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    gamma_quantile_from_normal(shape, std_normal_quantile(p))
}
