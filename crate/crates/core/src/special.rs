//! Closed forms used as building blocks and oracles: normal law, Black-Scholes
//! and Bachelier prices, the Mittag-Leffler function.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, ln_gamma};

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Zero-rate Black-Scholes call with total variance `w` = ∫σ²dt.
pub fn bs_call(s: f64, k: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return (s - k).max(0.0);
    }
    let sd = w.sqrt();
    let d1 = ((s / k).ln() + 0.5 * w) / sd;
    s * norm_cdf(d1) - k * norm_cdf(d1 - sd)
}

pub fn bs_put(s: f64, k: f64, w: f64) -> f64 {
    bs_call(s, k, w) - s + k
}

/// ∂/∂s of [`bs_call`].
pub fn bs_call_delta(s: f64, k: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    let sd = w.sqrt();
    norm_cdf(((s / k).ln() + 0.5 * w) / sd)
}

/// ∂/∂w of [`bs_call`] (sensitivity to total variance).
pub fn bs_call_dw(s: f64, k: f64, w: f64) -> f64 {
    let sd = w.sqrt();
    let d1 = ((s / k).ln() + 0.5 * w) / sd;
    s * norm_pdf(d1) / (2.0 * sd)
}

/// Bachelier call E[(x + sd·N − k)^+].
pub fn bachelier_call(x: f64, k: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return (x - k).max(0.0);
    }
    let d = (x - k) / sd;
    (x - k) * norm_cdf(d) + sd * norm_pdf(d)
}

/// Mittag-Leffler function E_{a,b}(z) by its power series, stopped when a
/// term falls below 1e-14 of the partial sum or after 200 terms.
/// Returns the value and the number of terms used. Intended for moderate |z|.
pub fn mittag_leffler(a: f64, b: f64, z: f64) -> (f64, usize) {
    let mut sum = 0.0;
    for n in 0..200 {
        let arg = a * n as f64 + b;
        let term = if z == 0.0 {
            if n == 0 { 1.0 / gamma(b) } else { 0.0 }
        } else {
            let mag = (n as f64 * z.abs().ln() - ln_gamma(arg)).exp();
            let sign = if z < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
            sign * mag
        };
        sum += term;
        if n > 0 && term.abs() < 1e-14 * sum.abs() {
            return (sum, n + 1);
        }
    }
    (sum, 200)
}
