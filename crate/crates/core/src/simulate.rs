//! Euler simulation of Volterra SDEs and the two-time field Θ^{t_i}_{s_j}.
//!
//! One routine, [`propagate_source`], adds the contribution of the source cell
//! [t_i, t_{i+1}] to every later target. The simulator and the Θ field both use
//! it with the same summation order, so Θ[i][i] equals X_{t_i} bit for bit.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{Coefficients, History, SeparableCoefficients, TruncationConfig};
use crate::path::Path;
use crate::rng::brownian_increments;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("simulation config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, SimError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(SimError::Config("need at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }
}

/// Simulated paths: per path a `n_steps × k` noise block and a `(n_steps+1) × d` state block.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub seed: u64,
    pub path_count: usize,
    pub noise: Vec<f64>,
    pub states: Vec<f64>,
}

impl PathEnsemble {
    pub fn noise_of(&self, p: usize) -> &[f64] {
        let len = self.grid.n_steps * self.dim_noise;
        &self.noise[p * len..(p + 1) * len]
    }

    pub fn states_of(&self, p: usize) -> &[f64] {
        let len = (self.grid.n_steps + 1) * self.dim_state;
        &self.states[p * len..(p + 1) * len]
    }

    pub fn state(&self, p: usize, i: usize) -> &[f64] {
        let d = self.dim_state;
        &self.states_of(p)[i * d..(i + 1) * d]
    }

    pub fn increment(&self, p: usize, i: usize) -> &[f64] {
        let k = self.dim_noise;
        &self.noise_of(p)[i * k..(i + 1) * k]
    }

    pub fn path(&self, p: usize) -> Path {
        Path::new(self.grid.nodes(), self.states_of(p).to_vec(), self.dim_state).expect("grid nodes are valid")
    }

    /// The same Brownian paths on a grid `factor` times coarser (increments summed),
    /// re-simulated under `coeff`.
    pub fn coarsen(&self, coeff: &dyn Coefficients, factor: usize) -> Result<PathEnsemble, SimError> {
        if factor == 0 || self.grid.n_steps % factor != 0 {
            return Err(SimError::Config(format!("cannot coarsen {} steps by {factor}", self.grid.n_steps)));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.n_steps / factor)?;
        let k = self.dim_noise;
        let results: Vec<Result<(Vec<f64>, Vec<f64>), SimError>> = (0..self.path_count)
            .into_par_iter()
            .map(|p| {
                let fine = self.noise_of(p);
                let mut coarse = vec![0.0; grid.n_steps * k];
                for i in 0..grid.n_steps {
                    for f in 0..factor {
                        for l in 0..k {
                            coarse[i * k + l] += fine[(i * factor + f) * k + l];
                        }
                    }
                }
                let states = simulate_path(coeff, &grid, &coarse, p)?;
                Ok((coarse, states))
            })
            .collect();
        assemble(grid, coeff, self.seed, results)
    }
}

/// Scheme weights for a separable coefficient on a uniform grid, indexed by
/// component and lag m = j - i.
struct LagTable {
    drift: Vec<Vec<f64>>,
    diffusion: Vec<Vec<f64>>,
}

impl LagTable {
    fn build(sep: &SeparableCoefficients, grid: &TimeGrid) -> Option<Self> {
        if !sep.kernels.iter().all(|k| k.is_convolution()) {
            return None;
        }
        let h = grid.dt();
        let n = grid.n_steps;
        let mut drift = Vec::with_capacity(sep.kernels.len());
        let mut diffusion = Vec::with_capacity(sep.kernels.len());
        for i in 0..sep.kernels.len() {
            let mut wd = vec![0.0; n + 1];
            let mut ws = vec![0.0; n + 1];
            for m in 1..=n {
                let (a, b) = sep.weights(i, m as f64 * h, 0.0, h);
                wd[m] = a;
                ws[m] = b;
            }
            drift.push(wd);
            diffusion.push(ws);
        }
        Some(Self { drift, diffusion })
    }
}

/// Precomputed per-grid data for [`propagate_source`].
pub struct StepPlan<'a> {
    coeff: &'a dyn Coefficients,
    grid: TimeGrid,
    times: Vec<f64>,
    lags: Option<LagTable>,
}

impl<'a> StepPlan<'a> {
    pub fn new(coeff: &'a dyn Coefficients, grid: TimeGrid) -> Self {
        let lags = coeff.as_separable().and_then(|s| LagTable::build(s, &grid));
        Self { coeff, grid, times: grid.nodes(), lags }
    }

    pub fn coefficients(&self) -> &'a dyn Coefficients {
        self.coeff
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Drift and diffusion weights the scheme applies from source i to target j > i.
    pub fn step_coefficients(&self, i: usize, j: usize, hist: &History<'_>, b: &mut [f64], s: &mut [f64]) {
        let coeff = self.coeff;
        if let Some(sep) = coeff.as_separable() {
            let (beta, gamma) = sep.source_terms(hist);
            let k = sep.dim_noise;
            for c in 0..sep.x0.len() {
                let (wd, ws) = match &self.lags {
                    Some(t) => (t.drift[c][j - i], t.diffusion[c][j - i]),
                    None => sep.weights(c, self.times[j], self.times[i], self.times[i + 1]),
                };
                b[c] = wd * beta[c];
                for l in 0..k {
                    s[c * k + l] = ws * gamma[c * k + l];
                }
            }
            return;
        }
        coeff.step_drift(self.times[j], self.times[i + 1], hist, b);
        coeff.step_diffusion(self.times[j], self.times[i + 1], hist, s);
    }
}

/// Adds the contribution of source cell i to `acc` rows j = i+1..=N (row-major, d per row,
/// `acc` indexed from row 0).
pub fn propagate_source(plan: &StepPlan<'_>, i: usize, hist: &History<'_>, dw: &[f64], acc: &mut [f64]) {
    let coeff = plan.coeff;
    let d = coeff.dim_state();
    let k = coeff.dim_noise();
    let dt = plan.grid.dt();
    let n = plan.grid.n_steps;
    if let (Some(sep), Some(lags)) = (coeff.as_separable(), &plan.lags) {
        let (beta, gamma) = sep.source_terms(hist);
        for j in i + 1..=n {
            let m = j - i;
            for c in 0..d {
                let mut noise = 0.0;
                for l in 0..k {
                    noise += lags.diffusion[c][m] * gamma[c * k + l] * dw[l];
                }
                acc[j * d + c] += lags.drift[c][m] * beta[c] * dt + noise;
            }
        }
        return;
    }
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * k];
    for j in i + 1..=n {
        plan.step_coefficients(i, j, hist, &mut b, &mut s);
        for c in 0..d {
            let mut noise = 0.0;
            for l in 0..k {
                noise += s[c * k + l] * dw[l];
            }
            acc[j * d + c] += b[c] * dt + noise;
        }
    }
}

/// States of one path driven by the given increments.
pub fn simulate_path(coeff: &dyn Coefficients, grid: &TimeGrid, noise: &[f64], path: usize) -> Result<Vec<f64>, SimError> {
    let plan = StepPlan::new(coeff, *grid);
    simulate_with_plan(&plan, noise, path)
}

fn simulate_with_plan(plan: &StepPlan<'_>, noise: &[f64], path: usize) -> Result<Vec<f64>, SimError> {
    let coeff = plan.coeff;
    let d = coeff.dim_state();
    let k = coeff.dim_noise();
    let n = plan.grid.n_steps;
    let x0 = coeff.initial_state();
    let mut acc: Vec<f64> = (0..=n).flat_map(|_| x0.iter().copied()).collect();
    let mut states = vec![0.0; (n + 1) * d];
    for i in 0..n {
        states[i * d..(i + 1) * d].copy_from_slice(&acc[i * d..(i + 1) * d]);
        if states[i * d..(i + 1) * d].iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { path, step: i });
        }
        let hist = History::new(&plan.times[..=i], &states[..(i + 1) * d], d);
        propagate_source(plan, i, &hist, &noise[i * k..(i + 1) * k], &mut acc);
    }
    states[n * d..].copy_from_slice(&acc[n * d..]);
    if states[n * d..].iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite { path, step: n });
    }
    Ok(states)
}

fn assemble(
    grid: TimeGrid,
    coeff: &dyn Coefficients,
    seed: u64,
    results: Vec<Result<(Vec<f64>, Vec<f64>), SimError>>,
) -> Result<PathEnsemble, SimError> {
    let path_count = results.len();
    let mut noise = Vec::with_capacity(path_count * grid.n_steps * coeff.dim_noise());
    let mut states = Vec::with_capacity(path_count * (grid.n_steps + 1) * coeff.dim_state());
    for r in results {
        let (n, s) = r?;
        noise.extend(n);
        states.extend(s);
    }
    Ok(PathEnsemble {
        grid,
        dim_state: coeff.dim_state(),
        dim_noise: coeff.dim_noise(),
        seed,
        path_count,
        noise,
        states,
    })
}

/// Left-point (or cell-weighted, for separable coefficients) Euler scheme
/// X_{t_j} = x + Σ_{r<j} b(t_j;t_r,X)Δt + σ(t_j;t_r,X)ΔW_r, parallel over paths.
pub fn simulate_ensemble(coeff: &dyn Coefficients, grid: TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble, SimError> {
    if n_paths == 0 {
        return Err(SimError::Config("need at least one path".into()));
    }
    if coeff.initial_state().len() != coeff.dim_state() {
        return Err(SimError::Config("initial state has the wrong dimension".into()));
    }
    let plan = StepPlan::new(coeff, grid);
    let k = coeff.dim_noise();
    let results: Vec<Result<(Vec<f64>, Vec<f64>), SimError>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let noise = brownian_increments(seed, p as u64, grid.n_steps, k, grid.dt());
            let states = simulate_with_plan(&plan, &noise, p)?;
            Ok((noise, states))
        })
        .collect();
    assemble(grid, coeff, seed, results)
}

/// Θ[i][j] = Θ^{t_i}_{t_j} for j ≥ i, for one path.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaField {
    pub grid: TimeGrid,
    pub dim: usize,
    rows: Vec<Vec<f64>>,
    pub truncation: Option<TruncationConfig>,
}

impl ThetaField {
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        assert!(j >= i && j <= self.grid.n_steps, "theta index ({i},{j}) out of range");
        let d = self.dim;
        &self.rows[i][(j - i) * d..(j - i + 1) * d]
    }

    /// The curve s_j ↦ Θ^{t_i}_{s_j}, j = i..=N.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// X_{t_i}, recovered from the diagonal.
    pub fn diagonal(&self, i: usize) -> &[f64] {
        self.get(i, i)
    }

    /// ω⊗_{t_i}θ: X on nodes before t_i, Θ^{t_i} from t_i on.
    pub fn concat(&self, i: usize) -> ConcatPath {
        let n = self.grid.n_steps;
        assert!(i <= n, "split index {i} beyond {n} steps");
        let d = self.dim;
        let mut values = Vec::with_capacity((n + 1) * d);
        for j in 0..i {
            values.extend_from_slice(self.diagonal(j));
        }
        values.extend_from_slice(&self.rows[i]);
        let path = Path::new(self.grid.nodes(), values, d).expect("grid nodes are valid");
        ConcatPath { split_index: i, split_time: self.grid.time(i), path }
    }
}

/// A concatenated path ω⊗_tθ with its split point.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatPath {
    pub split_index: usize,
    pub split_time: f64,
    pub path: Path,
}

fn check_path_index(ensemble: &PathEnsemble, coeff: &dyn Coefficients, p: usize) -> Result<(), SimError> {
    if p >= ensemble.path_count {
        return Err(SimError::Config(format!("path index {p} out of range ({} paths)", ensemble.path_count)));
    }
    if ensemble.dim_state != coeff.dim_state() || ensemble.dim_noise != coeff.dim_noise() {
        return Err(SimError::Config("ensemble and coefficient dimensions differ".into()));
    }
    Ok(())
}

/// Θ^{t_i}_{s_j} = x + Σ_{r<i} [b(s_j;t_r,X)Δt + σ(s_j;t_r,X)ΔW_r], using the scheme's weights.
pub fn theta_field(ensemble: &PathEnsemble, coeff: &dyn Coefficients, p: usize) -> Result<ThetaField, SimError> {
    check_path_index(ensemble, coeff, p)?;
    let plan = StepPlan::new(coeff, ensemble.grid);
    theta_field_with_plan(&plan, ensemble, p)
}

pub fn theta_field_with_plan(plan: &StepPlan<'_>, ensemble: &PathEnsemble, p: usize) -> Result<ThetaField, SimError> {
    let coeff = plan.coeff;
    let d = coeff.dim_state();
    let k = coeff.dim_noise();
    let n = ensemble.grid.n_steps;
    let states = ensemble.states_of(p);
    let noise = ensemble.noise_of(p);
    let x0 = coeff.initial_state();
    let mut acc: Vec<f64> = (0..=n).flat_map(|_| x0.iter().copied()).collect();
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..=n {
        rows.push(acc[i * d..].to_vec());
        if rows[i].iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { path: p, step: i });
        }
        if i < n {
            let hist = History::new(&plan.times[..=i], &states[..(i + 1) * d], d);
            propagate_source(plan, i, &hist, &noise[i * k..(i + 1) * k], &mut acc);
        }
    }
    Ok(ThetaField { grid: ensemble.grid, dim: d, rows, truncation: None })
}

/// Θ^{δ,t_i}_{s_j}: as [`theta_field`] but with left-point truncated coefficients
/// φ(s_j ∨ (t_r+δ); t_r, X).
pub fn theta_field_truncated(
    ensemble: &PathEnsemble,
    coeff: &dyn Coefficients,
    p: usize,
    cfg: &TruncationConfig,
) -> Result<ThetaField, SimError> {
    check_path_index(ensemble, coeff, p)?;
    let d = coeff.dim_state();
    let k = coeff.dim_noise();
    let grid = ensemble.grid;
    let n = grid.n_steps;
    let dt = grid.dt();
    let times = grid.nodes();
    let states = ensemble.states_of(p);
    let noise = ensemble.noise_of(p);
    let x0 = coeff.initial_state();
    let mut acc: Vec<f64> = (0..=n).flat_map(|_| x0.iter().copied()).collect();
    let mut rows = Vec::with_capacity(n + 1);
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * k];
    for i in 0..=n {
        rows.push(acc[i * d..].to_vec());
        if i == n {
            break;
        }
        let hist = History::new(&times[..=i], &states[..(i + 1) * d], d);
        let dw = &noise[i * k..(i + 1) * k];
        for j in i + 1..=n {
            let target = times[j].max(times[i] + cfg.delta);
            coeff.drift(target, &hist, &mut b);
            coeff.diffusion(target, &hist, &mut s);
            for c in 0..d {
                let mut v = b[c] * dt;
                for l in 0..k {
                    v += s[c * k + l] * dw[l];
                }
                acc[j * d + c] += v;
            }
        }
    }
    Ok(ThetaField { grid, dim: d, rows, truncation: Some(cfg.clone()) })
}

/// X^n_{t_j} = Θ^{τ_k}_{t_j} on dyadic blocks [τ_k, τ_{k+1}) of 2^n blocks.
pub fn piecewise_freeze(ensemble: &PathEnsemble, coeff: &dyn Coefficients, level: u32) -> Result<PathEnsemble, SimError> {
    let n = ensemble.grid.n_steps;
    let blocks = 1usize.checked_shl(level).unwrap_or(0);
    if blocks == 0 || n % blocks != 0 {
        return Err(SimError::Config(format!("2^{level} does not divide {n} steps")));
    }
    let width = n / blocks;
    let d = ensemble.dim_state;
    let plan = StepPlan::new(coeff, ensemble.grid);
    let results: Vec<Result<Vec<f64>, SimError>> = (0..ensemble.path_count)
        .into_par_iter()
        .map(|p| {
            let field = theta_field_with_plan(&plan, ensemble, p)?;
            let mut out = Vec::with_capacity((n + 1) * d);
            for j in 0..=n {
                let start = (j / width) * width;
                out.extend_from_slice(field.get(start, j));
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(ensemble.states.len());
    for r in results {
        states.extend(r?);
    }
    Ok(PathEnsemble { states, ..ensemble.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelSpec, WeightScheme};
    use crate::stats::MeanSe;
    use std::sync::Arc;

    fn brownian() -> SeparableCoefficients {
        SeparableCoefficients::gaussian(KernelSpec::constant(), 0.0)
    }

    #[test]
    fn brownian_is_cumulative_sum() {
        let c = brownian();
        let e = simulate_ensemble(&c, TimeGrid::new(1.0, 16).unwrap(), 3, 5).unwrap();
        for p in 0..3 {
            let mut w = 0.0;
            assert_eq!(e.state(p, 0), &[0.0]);
            for i in 0..16 {
                w += e.increment(p, i)[0];
                assert!((e.state(p, i + 1)[0] - w).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let c = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.2);
        let g = TimeGrid::new(1.0, 32).unwrap();
        let a = simulate_ensemble(&c, g, 1, 9).unwrap();
        let b = simulate_ensemble(&c, g, 1, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn theta_examples_and_diagonal_identity() {
        let c = brownian();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let e = simulate_ensemble(&c, g, 2, 1).unwrap();
        let f = theta_field(&e, &c, 1).unwrap();
        for i in 0..=20 {
            for j in i..=20 {
                assert_eq!(f.get(i, j)[0], e.state(1, i)[0]);
            }
        }
        let rl = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.5);
        let e = simulate_ensemble(&rl, g, 2, 1).unwrap();
        let f = theta_field(&e, &rl, 0).unwrap();
        for j in 0..=20 {
            assert_eq!(f.get(0, j), &[0.5]);
        }
        for i in 0..=20 {
            assert_eq!(f.diagonal(i), e.state(0, i));
        }
    }

    #[test]
    fn generic_coefficients_keep_diagonal_identity() {
        // non-separable: b(t;s,ω) = sin(t)·ω_s, σ(t;s,ω) = (1+t-s)^{-0.2}·cos(ω_s) with a 2-d noise
        struct Custom;
        impl Coefficients for Custom {
            fn dim_state(&self) -> usize { 1 }
            fn dim_noise(&self) -> usize { 2 }
            fn initial_state(&self) -> &[f64] { &[0.3] }
            fn hurst(&self) -> f64 { 0.5 }
            fn drift(&self, t: f64, h: &History<'_>, out: &mut [f64]) { out[0] = t.sin() * h.current()[0]; }
            fn diffusion(&self, t: f64, h: &History<'_>, out: &mut [f64]) {
                let w = (1.0 + t - h.time()).powf(-0.2);
                out[0] = w * h.current()[0].cos();
                out[1] = 0.5 * w;
            }
        }
        let c = Custom;
        let g = TimeGrid::new(1.0, 24).unwrap();
        let e = simulate_ensemble(&c, g, 3, 2).unwrap();
        let f = theta_field(&e, &c, 2).unwrap();
        for i in 0..=24 {
            assert_eq!(f.diagonal(i), e.state(2, i));
        }
        let cp = f.concat(7);
        assert_eq!(cp.path.node(6), e.state(2, 6));
        assert_eq!(cp.path.node(7), e.state(2, 7));
        assert_eq!(cp.path.node(20), f.get(7, 20));
    }

    #[test]
    fn concat_extremes() {
        let c = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.1);
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = simulate_ensemble(&c, g, 1, 3).unwrap();
        let f = theta_field(&e, &c, 0).unwrap();
        assert!(f.concat(0).path.values().iter().all(|&v| v == 0.1));
        assert_eq!(f.concat(10).path.values(), e.states_of(0));
    }

    #[test]
    fn brownian_concat_post_segment_is_flat() {
        let c = brownian();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = simulate_ensemble(&c, g, 1, 4).unwrap();
        let cp = theta_field(&e, &c, 0).unwrap().concat(4);
        for j in 4..=10 {
            assert_eq!(cp.path.node(j)[0], e.state(0, 4)[0]);
        }
    }

    #[test]
    fn freeze_extremes() {
        let c = brownian();
        let g = TimeGrid::new(1.0, 16).unwrap();
        let e = simulate_ensemble(&c, g, 2, 4).unwrap();
        let full = piecewise_freeze(&e, &c, 4).unwrap();
        assert_eq!(full.states, e.states);
        let coarse = piecewise_freeze(&e, &c, 2).unwrap();
        // Brownian: frozen value on each block equals W at the block start
        for j in 0..16 {
            assert_eq!(coarse.state(1, j)[0], e.state(1, (j / 4) * 4)[0]);
        }
        assert_eq!(coarse.state(1, 16), e.state(1, 16));
        assert!(piecewise_freeze(&e, &c, 5).is_err());
    }

    #[test]
    fn rl_terminal_variance_matches_closed_form() {
        let c = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.0);
        let g = TimeGrid::new(1.0, 64).unwrap();
        let n = 20_000;
        let e = simulate_ensemble(&c, g, n, 17).unwrap();
        let sq: Vec<f64> = (0..n).map(|p| e.state(p, 64)[0].powi(2)).collect();
        let m = MeanSe::of(&sq);
        assert!(m.t_stat(1.0).abs() < 3.0, "{m:?}");
    }

    #[test]
    fn left_point_scheme_underestimates_singular_variance() {
        let c = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.0)
            .with_scheme(WeightScheme::LeftPoint);
        let g = TimeGrid::new(1.0, 16).unwrap();
        // discrete variance Σ K(T, t_r)² Δt vs T^{2H}
        let plan = StepPlan::new(&c, g);
        let times = plan.times().to_vec();
        let st = vec![0.0; 17];
        let mut var = 0.0;
        let (mut b, mut s) = ([0.0], [0.0]);
        for r in 0..16 {
            let hist = History::new(&times[..=r], &st[..=r], 1);
            plan.step_coefficients(r, 16, &hist, &mut b, &mut s);
            var += s[0] * s[0] * g.dt();
        }
        assert!(var < 0.95);
    }

    #[test]
    fn coarsen_sums_increments() {
        let c = brownian();
        let e = simulate_ensemble(&c, TimeGrid::new(1.0, 8).unwrap(), 2, 3).unwrap();
        let q = e.coarsen(&c, 4).unwrap();
        assert_eq!(q.grid.n_steps, 2);
        assert!((q.state(1, 2)[0] - e.state(1, 8)[0]).abs() < 1e-14);
        assert!((q.state(1, 1)[0] - e.state(1, 4)[0]).abs() < 1e-14);
    }

    #[test]
    fn non_finite_state_is_reported() {
        let c = SeparableCoefficients {
            x0: vec![1.0],
            dim_noise: 1,
            kernels: vec![KernelSpec::constant()],
            drift: Some(Arc::new(|_, x, out| out[0] = x[0] * 1e300)),
            diffusion: Arc::new(|_, _, out| out[0] = 0.0),
            scheme: WeightScheme::LeftPoint,
        };
        let err = simulate_ensemble(&c, TimeGrid::new(1.0, 8).unwrap(), 1, 0).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { path: 0, .. }));
    }
}
