//! Upper-tail probabilities of the standard normal distribution.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Below this `x` the scaled complementary error function is `exp(x^2) erfc(x)`;
/// above it the Laplace continued fraction converges in a few dozen terms.
const ERFCX_CF_CUTOVER: f64 = 8.0;
const ERFCX_CF_TERMS: usize = 80;

/// `exp(x^2)` with the rounding error of `x * x` folded back in.
fn exp_square(x: f64) -> f64 {
    let hi = x * x;
    let lo = x.mul_add(x, -hi);
    hi.exp() * (1.0 + lo)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 * exp_square(x) - erfcx(-x);
    }
    if x < ERFCX_CF_CUTOVER {
        return exp_square(x) * libm::erfc(x);
    }
    if x.is_infinite() {
        return 0.0;
    }
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = 0.0;
    for k in (1..=ERFCX_CF_TERMS).rev() {
        tail = (k as f64 * 0.5) / (x + tail);
    }
    1.0 / (PI.sqrt() * (x + tail))
}

/// `Q(alpha) = P(Z >= alpha)` for a standard normal `Z`.
pub fn gaussian_tail(alpha: f64) -> f64 {
    0.5 * libm::erfc(alpha * FRAC_1_SQRT_2)
}

/// `ln Q(alpha)`, finite far beyond the point where `Q` itself underflows.
pub fn log_gaussian_tail(alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return gaussian_tail(alpha).ln();
    }
    let x = alpha * FRAC_1_SQRT_2;
    (0.5 * erfcx(x)).ln() - 0.5 * alpha * alpha
}

/// Standard normal density.
pub fn gaussian_pdf(alpha: f64) -> f64 {
    (-0.5 * alpha * alpha).exp() / (2.0 * PI).sqrt()
}

/// Inverse Mills ratio `phi(alpha) / Q(alpha)`, the mean of a standard normal
/// truncated to `[alpha, inf)`.
pub fn hazard(alpha: f64) -> f64 {
    if alpha < 0.0 {
        gaussian_pdf(alpha) / gaussian_tail(alpha)
    } else {
        (2.0 / PI).sqrt() / erfcx(alpha * FRAC_1_SQRT_2)
    }
}
