//! The linear map between Θ^t and the forward variance Θ̂^t in rough Heston:
//! Θ̂_s = Θ_s + Γ(α)⁻¹∫_t^s (s−r)^{α−1} λ(θ − Θ̂_r) dr, α = H+½.
//!
//! Two routes. The grid route uses product integration: (s−r)^{α−1} is
//! integrated exactly against piecewise-linear Θ̂, and the equation is solved
//! node by node (implicit in the newest node). The series route writes
//! Θ̂ + λI^αΘ̂ = F with F = Θ + λθ(s−t)^α/Γ(α+1) and I^α the fractional
//! integral from t, so Θ̂ = F + Σ_{n≥1}(−λ)^n I^{nα}F; each I^{nα} is exact for
//! piecewise-linear Θ and for the power term.

use statrs::function::gamma::{gamma, ln_gamma};

use super::{RoughHestonParams, RoughVolError};
use crate::quadrature::linear_cell_weights;

/// Above this value of λ(T−t)^α the series route is not attempted.
pub const SERIES_MAX_ARGUMENT: f64 = 10.0;

const SERIES_REL_STOP: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 200;

fn check_inputs(horizons: &[f64], values: &[f64]) -> Result<(), RoughVolError> {
    if horizons.is_empty() || horizons.len() != values.len() {
        return Err(RoughVolError::Config("horizons and values must be non-empty and of equal length".into()));
    }
    if horizons.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RoughVolError::Config("horizons must be strictly increasing".into()));
    }
    Ok(())
}

/// Product-integration weights c_q with ∫_t^s (s−r)^{beta−1} L(r) dr = Σ_{q≤j} c_q L(u_q)
/// for L linear between the nodes u_0 = t, …, u_j = s.
fn product_weights(beta: f64, horizons: &[f64], j: usize) -> Vec<f64> {
    let s = horizons[j];
    let mut c = vec![0.0; j + 1];
    for q in 0..j {
        let (w_near, w_far) = linear_cell_weights(beta, s - horizons[q + 1], s - horizons[q]);
        c[q + 1] += w_near;
        c[q] += w_far;
    }
    c
}

/// Θ̂ from Θ on the horizons (horizons[0] is the anchor t), grid route.
pub fn theta_to_hat(params: &RoughHestonParams, horizons: &[f64], theta: &[f64]) -> Result<Vec<f64>, RoughVolError> {
    params.validate()?;
    check_inputs(horizons, theta)?;
    let alpha = params.alpha();
    let c = params.mean_rev_rate / gamma(alpha);
    let level = params.mean_rev_level;
    let mut hat = Vec::with_capacity(theta.len());
    hat.push(theta[0]);
    for j in 1..theta.len() {
        let w = product_weights(alpha, horizons, j);
        let total: f64 = w.iter().sum();
        let known: f64 = w[..j].iter().zip(&hat).map(|(a, b)| a * b).sum();
        hat.push((theta[j] + c * (level * total - known)) / (1.0 + c * w[j]));
    }
    Ok(hat)
}

/// Θ from Θ̂ by direct quadrature with the same weights as [`theta_to_hat`],
/// so the pair inverts exactly up to rounding.
pub fn hat_to_theta(params: &RoughHestonParams, horizons: &[f64], hat: &[f64]) -> Result<Vec<f64>, RoughVolError> {
    params.validate()?;
    check_inputs(horizons, hat)?;
    let alpha = params.alpha();
    let c = params.mean_rev_rate / gamma(alpha);
    let level = params.mean_rev_level;
    let mut theta = Vec::with_capacity(hat.len());
    theta.push(hat[0]);
    for j in 1..hat.len() {
        let w = product_weights(alpha, horizons, j);
        let total: f64 = w.iter().sum();
        let known: f64 = w.iter().zip(hat).map(|(a, b)| a * b).sum();
        theta.push(hat[j] - c * (level * total - known));
    }
    Ok(theta)
}

/// Θ̂ from Θ by the resolvent series, exact for Θ linear between the horizons.
/// Each node's series stops once a term is below 1e-14 of the partial sum, or
/// after 200 terms.
pub fn theta_to_hat_series(params: &RoughHestonParams, horizons: &[f64], theta: &[f64]) -> Result<Vec<f64>, RoughVolError> {
    params.validate()?;
    check_inputs(horizons, theta)?;
    let alpha = params.alpha();
    let lambda = params.mean_rev_rate;
    let level = params.mean_rev_level;
    let t = horizons[0];
    let span = horizons[horizons.len() - 1] - t;
    if lambda * span.powf(alpha) > SERIES_MAX_ARGUMENT {
        return Err(RoughVolError::Config(format!(
            "series argument λ(T−t)^α = {:.3} exceeds {SERIES_MAX_ARGUMENT}; use the grid route",
            lambda * span.powf(alpha)
        )));
    }
    let mut hat = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let u = horizons[j] - t;
        let mut sum = theta[j] + lambda * level * u.powf(alpha) / gamma(alpha + 1.0);
        if j > 0 && lambda > 0.0 {
            for n in 1..=SERIES_MAX_TERMS {
                let order = n as f64 * alpha;
                let w = product_weights(order, horizons, j);
                let data: f64 = w.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() * (-ln_gamma(order)).exp();
                let power = lambda * level * (u.powf(order + alpha).ln() - ln_gamma(order + alpha + 1.0)).exp();
                let term = (-lambda).powi(n as i32) * (data + power);
                sum += term;
                if term == 0.0 || term.abs() < SERIES_REL_STOP * sum.abs() {
                    break;
                }
            }
        }
        hat.push(sum);
    }
    Ok(hat)
}

/// Both routes and their largest relative disagreement.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformCheck {
    pub grid: Vec<f64>,
    pub series: Vec<f64>,
    pub max_rel_error: f64,
}

/// Runs both routes and fails with the offending values if they differ by more
/// than `rel_tol` relative to the series value.
pub fn theta_to_hat_checked(
    params: &RoughHestonParams,
    horizons: &[f64],
    theta: &[f64],
    rel_tol: f64,
) -> Result<TransformCheck, RoughVolError> {
    let grid = theta_to_hat(params, horizons, theta)?;
    let series = theta_to_hat_series(params, horizons, theta)?;
    let mut max_rel_error: f64 = 0.0;
    let mut worst = 0;
    for j in 0..grid.len() {
        let e = (grid[j] - series[j]).abs() / series[j].abs().max(f64::MIN_POSITIVE);
        if e > max_rel_error {
            max_rel_error = e;
            worst = j;
        }
    }
    if max_rel_error > rel_tol {
        return Err(RoughVolError::Transform { at: horizons[worst], grid: grid[worst], series: series[worst] });
    }
    Ok(TransformCheck { grid, series, max_rel_error })
}

/// Horizons t + (T−t)(k/m)^grading, k = 0..=m, clustered near t where Θ̂ has
/// its (s−t)^α behaviour.
pub fn graded_horizons(t: f64, horizon: f64, m: usize, grading: f64) -> Vec<f64> {
    (0..=m).map(|k| t + (horizon - t) * (k as f64 / m as f64).powf(grading)).collect()
}
