//! Rough Heston and rough Bergomi: simulation, the Θ field, forward-variance
//! transforms, nested pricing and hedging experiments.
//!
//! Heston variance is the Volterra process
//! V_t = V_0 + Γ(α)⁻¹∫_0^t (t−r)^{α−1}[λ(θ−V_r)dr + ν√V_r dW²_r], α = H+½,
//! discretized with cell-mean drift weights and cell-RMS diffusion weights of
//! the kernel on a uniform grid. The drift stays linear in V (it is not
//! truncated) so that E[V_s|F_t] is an exact linear functional of Θ^t on the
//! grid; only the square root sees V⁺. The stock is stepped exactly lognormal
//! given the variance on each cell.
//!
//! Bergomi variance is V_t = V_0 exp(M_t − ½λ²t^{2H}) with
//! M_t = λ√(2H)∫_0^t (t−r)^{H−½}dW²_r.

mod hedge;
mod transform;

pub use hedge::{
    hedge_experiment, hedge_ratios, pnl_experiment, price_claim, Claim, HedgeComparison, HedgeConfig, HedgeMode,
    HedgeRatios, HedgeReport, NestedConfig, ObservedState, PnlSummary, PriceEstimate, PricingMethod,
};
pub use transform::{
    graded_horizons, hat_to_theta, theta_to_hat, theta_to_hat_checked, theta_to_hat_series, TransformCheck,
    SERIES_MAX_ARGUMENT,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::io::{write_columns, IoError};
use crate::rng::brownian_increments;
use crate::simulate::{PathEnsemble, SimError, TimeGrid};

/// Per-path stock values above this are clipped (rough Bergomi moment explosion).
pub const STOCK_CAP: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoughVolError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("transform disagreement at s = {at}: grid {grid}, series {series}")]
    Transform { at: f64, grid: f64, series: f64 },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughHestonParams {
    pub s0: f64,
    pub v0: f64,
    pub hurst: f64,
    pub mean_rev_rate: f64,
    pub mean_rev_level: f64,
    pub vol_of_vol: f64,
    pub correlation: f64,
}

impl RoughHestonParams {
    pub fn validate(&self) -> Result<(), RoughVolError> {
        let bad = |m: &str| Err(RoughVolError::Params(m.into()));
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad("s0 must be positive");
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            return bad("v0 must be nonnegative");
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return bad("hurst must lie in (0, 1)");
        }
        if !(self.mean_rev_rate >= 0.0 && self.mean_rev_level >= 0.0 && self.vol_of_vol >= 0.0) {
            return bad("mean_rev_rate, mean_rev_level and vol_of_vol must be nonnegative");
        }
        if !(self.correlation.abs() <= 1.0) {
            return bad("correlation must lie in [-1, 1]");
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.hurst + 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughBergomiParams {
    pub s0: f64,
    pub v0: f64,
    pub hurst: f64,
    pub vol_of_vol: f64,
    pub correlation: f64,
}

impl RoughBergomiParams {
    pub fn validate(&self) -> Result<(), RoughVolError> {
        let bad = |m: &str| Err(RoughVolError::Params(m.into()));
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return bad("s0 must be positive");
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return bad("v0 must be positive");
        }
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return bad("hurst must lie in (0, 1)");
        }
        if !(self.vol_of_vol >= 0.0 && self.vol_of_vol.is_finite()) {
            return bad("vol_of_vol must be nonnegative");
        }
        if !(self.correlation.abs() <= 1.0) {
            return bad("correlation must lie in [-1, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Heston(RoughHestonParams),
    Bergomi(RoughBergomiParams),
}

impl Model {
    pub fn validate(&self) -> Result<(), RoughVolError> {
        match self {
            Model::Heston(p) => p.validate(),
            Model::Bergomi(p) => p.validate(),
        }
    }

    pub fn s0(&self) -> f64 {
        match self {
            Model::Heston(p) => p.s0,
            Model::Bergomi(p) => p.s0,
        }
    }

    pub fn v0(&self) -> f64 {
        match self {
            Model::Heston(p) => p.v0,
            Model::Bergomi(p) => p.v0,
        }
    }

    pub fn hurst(&self) -> f64 {
        match self {
            Model::Heston(p) => p.hurst,
            Model::Bergomi(p) => p.hurst,
        }
    }

    pub fn correlation(&self) -> f64 {
        match self {
            Model::Heston(p) => p.correlation,
            Model::Bergomi(p) => p.correlation,
        }
    }

    /// Number of state components stored per node: (S, V) or (S, V, M).
    pub fn dim_state(&self) -> usize {
        match self {
            Model::Heston(_) => 2,
            Model::Bergomi(_) => 3,
        }
    }
}

/// The direction a^t_s = (s−t)^{H−½} on (t, T]; zero at s = t on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionA {
    pub anchor: f64,
    pub hurst: f64,
}

impl DirectionA {
    pub fn value(&self, s: f64) -> f64 {
        if s <= self.anchor {
            0.0
        } else {
            (s - self.anchor).powf(self.hurst - 0.5)
        }
    }

    pub fn values(&self, horizons: &[f64]) -> Vec<f64> {
        horizons.iter().map(|&s| self.value(s)).collect()
    }
}

/// Θ^t_s and Θ̂^t_s = E[V_s|F_t] on horizons s ≥ t.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardVarianceCurve {
    pub anchor_time: f64,
    pub horizons: Vec<f64>,
    pub hat_values: Vec<f64>,
    pub theta_values: Vec<f64>,
}

impl ForwardVarianceCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        write_columns(out, &["s", "theta", "hat"], &[&self.horizons, &self.theta_values, &self.hat_values])
    }
}

/// Simulated paths plus the number of stock values clipped at [`STOCK_CAP`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPaths {
    pub ensemble: PathEnsemble,
    pub cap_hits: usize,
}

/// A model on a uniform grid with its lag weights precomputed.
///
/// `drift_w[m]` and `diff_w[m]` act from a source cell to the node m steps
/// after its left end (index 0 unused).
#[derive(Clone, Debug)]
pub struct Scheme {
    pub model: Model,
    pub grid: TimeGrid,
    drift_w: Vec<f64>,
    diff_w: Vec<f64>,
    times: Vec<f64>,
}

impl Scheme {
    pub fn new(model: Model, grid: TimeGrid) -> Result<Self, RoughVolError> {
        model.validate()?;
        let n = grid.n_steps;
        let h = grid.dt();
        let hurst = model.hurst();
        let mut drift_w = vec![0.0; n + 1];
        let mut diff_w = vec![0.0; n + 1];
        // closed-form cell moments of (t−r)^{H−½}: mean and root-mean-square
        let mean = |m: usize| {
            let a = hurst + 0.5;
            ((m as f64 * h).powf(a) - ((m - 1) as f64 * h).powf(a)) / (a * h)
        };
        let rms = |m: usize| {
            let e = 2.0 * hurst;
            (((m as f64 * h).powf(e) - ((m - 1) as f64 * h).powf(e)) / (e * h)).sqrt()
        };
        match model {
            Model::Heston(p) => {
                let g = gamma(p.alpha());
                for m in 1..=n {
                    drift_w[m] = mean(m) / g;
                    diff_w[m] = rms(m) / g;
                }
            }
            Model::Bergomi(p) => {
                let c = p.vol_of_vol * (2.0 * hurst).sqrt();
                for m in 1..=n {
                    diff_w[m] = c * rms(m);
                }
            }
        }
        Ok(Scheme { model, grid, drift_w, diff_w, times: grid.nodes() })
    }

    pub fn heston(params: RoughHestonParams, grid: TimeGrid) -> Result<Self, RoughVolError> {
        Self::new(Model::Heston(params), grid)
    }

    pub fn bergomi(params: RoughBergomiParams, grid: TimeGrid) -> Result<Self, RoughVolError> {
        Self::new(Model::Bergomi(params), grid)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Adds source cell `r` (state `v` at t_r, increment `dw2`) to the running
    /// sums `acc`, where acc[k] belongs to node `offset + k` and only nodes > r change.
    fn add_source(&self, acc: &mut [f64], offset: usize, r: usize, v: f64, dw2: f64) {
        let n = self.grid.n_steps;
        match self.model {
            Model::Heston(p) => {
                let drift = p.mean_rev_rate * (p.mean_rev_level - v) * self.grid.dt();
                let shock = p.vol_of_vol * v.max(0.0).sqrt() * dw2;
                for j in (r + 1).max(offset)..=n {
                    acc[j - offset] += self.drift_w[j - r] * drift + self.diff_w[j - r] * shock;
                }
            }
            Model::Bergomi(_) => {
                for j in (r + 1).max(offset)..=n {
                    acc[j - offset] += self.diff_w[j - r] * dw2;
                }
            }
        }
    }

    /// Initial value of the running sums: V_0 for Heston, M_0 = 0 for Bergomi.
    pub(crate) fn sum_origin(&self) -> f64 {
        match self.model {
            Model::Heston(p) => p.v0,
            Model::Bergomi(_) => 0.0,
        }
    }

    /// Variance at node j from the running sum there.
    fn variance_at(&self, j: usize, sum: f64) -> f64 {
        match self.model {
            Model::Heston(_) => sum,
            Model::Bergomi(p) => {
                let t = self.times[j];
                p.v0 * (sum - 0.5 * p.vol_of_vol * p.vol_of_vol * t.powf(2.0 * p.hurst)).exp()
            }
        }
    }

    /// One outer path from its noise (rows of (ΔW¹, ΔW²)).
    fn simulate_path(&self, noise: &[f64], path: usize) -> Result<(Vec<f64>, usize), SimError> {
        let n = self.grid.n_steps;
        let h = self.grid.dt();
        let d = self.model.dim_state();
        let rho = self.model.correlation();
        let rho_bar = (1.0 - rho * rho).max(0.0).sqrt();
        let mut acc = vec![self.sum_origin(); n + 1];
        let mut states = Vec::with_capacity((n + 1) * d);
        let mut log_s = self.model.s0().ln();
        let mut hits = 0;
        let push = |states: &mut Vec<f64>, s: f64, v: f64, m: f64| {
            states.push(s);
            states.push(v);
            if d == 3 {
                states.push(m);
            }
        };
        push(&mut states, self.model.s0(), self.variance_at(0, acc[0]), acc[0]);
        for i in 0..n {
            let v = self.variance_at(i, acc[i]);
            let vp = v.max(0.0);
            let (dw1, dw2) = (noise[2 * i], noise[2 * i + 1]);
            log_s += vp.sqrt() * (rho_bar * dw1 + rho * dw2) - 0.5 * vp * h;
            if log_s > STOCK_CAP.ln() {
                log_s = STOCK_CAP.ln();
                hits += 1;
            }
            let x = acc[i];
            self.add_source(&mut acc, 0, i, x, dw2);
            let s = log_s.exp();
            let v_next = self.variance_at(i + 1, acc[i + 1]);
            if !(s.is_finite() && v_next.is_finite()) {
                return Err(SimError::NonFinite { path, step: i + 1 });
            }
            push(&mut states, s, v_next, acc[i + 1]);
        }
        Ok((states, hits))
    }

    /// Simulates `n_paths` outer paths; noise columns are (W¹, W²), W² drives V.
    pub fn simulate(&self, n_paths: usize, seed: u64) -> Result<ModelPaths, RoughVolError> {
        if n_paths == 0 {
            return Err(RoughVolError::Config("need at least one path".into()));
        }
        let n = self.grid.n_steps;
        let results: Vec<Result<(Vec<f64>, Vec<f64>, usize), SimError>> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let noise = brownian_increments(seed, p as u64, n, 2, self.grid.dt());
                let (states, hits) = self.simulate_path(&noise, p)?;
                Ok((noise, states, hits))
            })
            .collect();
        let mut noise = Vec::with_capacity(n_paths * n * 2);
        let mut states = Vec::with_capacity(n_paths * (n + 1) * self.model.dim_state());
        let mut cap_hits = 0;
        for r in results {
            let (nz, st, hits) = r?;
            noise.extend(nz);
            states.extend(st);
            cap_hits += hits;
        }
        let ensemble = PathEnsemble {
            grid: self.grid,
            dim_state: self.model.dim_state(),
            dim_noise: 2,
            seed,
            path_count: n_paths,
            noise,
            states,
        };
        Ok(ModelPaths { ensemble, cap_hits })
    }

    fn check_ensemble(&self, ensemble: &PathEnsemble, p: usize) -> Result<(), RoughVolError> {
        if ensemble.grid != self.grid || ensemble.dim_state != self.model.dim_state() || ensemble.dim_noise != 2 {
            return Err(RoughVolError::Config("ensemble does not belong to this scheme".into()));
        }
        if p >= ensemble.path_count {
            return Err(RoughVolError::Config(format!("path {p} out of range")));
        }
        Ok(())
    }

    /// Θ^{t_i}_{t_j}, j = i..=N, for each requested anchor (ascending) on path p.
    /// Heston rows are in variance units; Bergomi rows are the Gaussian M-part.
    pub fn theta_rows(&self, ensemble: &PathEnsemble, p: usize, anchors: &[usize]) -> Result<Vec<Vec<f64>>, RoughVolError> {
        self.check_ensemble(ensemble, p)?;
        let n = self.grid.n_steps;
        if anchors.windows(2).any(|w| w[0] > w[1]) || anchors.iter().any(|&i| i > n) {
            return Err(RoughVolError::Config("anchors must be ascending grid indices".into()));
        }
        let mut acc = vec![self.sum_origin(); n + 1];
        let mut rows = Vec::with_capacity(anchors.len());
        let mut next = 0;
        for &i in anchors {
            while next < i {
                let x = match self.model {
                    Model::Heston(_) => ensemble.state(p, next)[1],
                    Model::Bergomi(_) => ensemble.state(p, next)[2],
                };
                self.add_source(&mut acc, 0, next, x, ensemble.increment(p, next)[1]);
                next += 1;
            }
            rows.push(acc[i..].to_vec());
        }
        Ok(rows)
    }

    /// Scheme-consistent forward variance E[V_{t_j}|F_{t_i}] from a Θ row at anchor i.
    pub fn hat_row(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let n = self.grid.n_steps;
        let h = self.grid.dt();
        match self.model {
            Model::Heston(p) => {
                let mut hat = Vec::with_capacity(theta.len());
                for j in i..=n {
                    let mut x = theta[j - i];
                    for r in i..j {
                        x += self.drift_w[j - r] * p.mean_rev_rate * (p.mean_rev_level - hat[r - i]) * h;
                    }
                    hat.push(x);
                }
                hat
            }
            Model::Bergomi(p) => {
                let ti = self.times[i];
                let l2 = p.vol_of_vol * p.vol_of_vol;
                let e = 2.0 * p.hurst;
                (i..=n)
                    .map(|j| {
                        let tj = self.times[j];
                        p.v0 * (theta[j - i] + 0.5 * l2 * ((tj - ti).powf(e) - tj.powf(e))).exp()
                    })
                    .collect()
            }
        }
    }

    /// Θ̂^{t_i}_T only.
    pub fn hat_terminal(&self, i: usize, theta: &[f64]) -> f64 {
        match self.model {
            Model::Heston(_) => *self.hat_row(i, theta).last().expect("non-empty row"),
            Model::Bergomi(p) => {
                let (ti, tn) = (self.times[i], self.grid.horizon);
                let e = 2.0 * p.hurst;
                p.v0 * (theta[theta.len() - 1] + 0.5 * p.vol_of_vol * p.vol_of_vol * ((tn - ti).powf(e) - tn.powf(e))).exp()
            }
        }
    }

    /// Re-simulates the variance on nodes i..N−1 given the Θ row at anchor i and
    /// fresh increments `dw2` (length N−i). `sums` is scratch of length N−i+1.
    pub(crate) fn resimulate_variance(&self, i: usize, theta: &[f64], dw2: &[f64], sums: &mut [f64], v_out: &mut [f64]) {
        let n = self.grid.n_steps;
        sums.copy_from_slice(theta);
        for r in i..n {
            let x = sums[r - i];
            v_out[r - i] = self.variance_at(r, x);
            self.add_source(sums, i, r, x, dw2[r - i]);
        }
    }

    /// Curve at anchor i on path p, with the scheme-consistent Θ̂.
    pub fn forward_curve(&self, ensemble: &PathEnsemble, p: usize, i: usize) -> Result<ForwardVarianceCurve, RoughVolError> {
        let theta = self.theta_rows(ensemble, p, &[i])?.pop().expect("one row");
        let hat_values = self.hat_row(i, &theta);
        Ok(ForwardVarianceCurve {
            anchor_time: self.times[i],
            horizons: self.times[i..].to_vec(),
            hat_values,
            theta_values: theta,
        })
    }
}

pub fn simulate_heston(params: &RoughHestonParams, grid: TimeGrid, n_paths: usize, seed: u64) -> Result<PathEnsemble, RoughVolError> {
    Ok(Scheme::heston(*params, grid)?.simulate(n_paths, seed)?.ensemble)
}

pub fn simulate_bergomi(params: &RoughBergomiParams, grid: TimeGrid, n_paths: usize, seed: u64) -> Result<ModelPaths, RoughVolError> {
    Scheme::bergomi(*params, grid)?.simulate(n_paths, seed)
}

/// Θ^{t_i} on path p with Θ̂ from the continuous-time transform
/// ([`theta_to_hat`]) on the grid horizons.
pub fn heston_theta(ensemble: &PathEnsemble, params: &RoughHestonParams, p: usize, i: usize) -> Result<ForwardVarianceCurve, RoughVolError> {
    let scheme = Scheme::heston(*params, ensemble.grid)?;
    let theta = scheme.theta_rows(ensemble, p, &[i])?.pop().expect("one row");
    let horizons = scheme.times()[i..].to_vec();
    let hat_values = theta_to_hat(params, &horizons, &theta)?;
    Ok(ForwardVarianceCurve { anchor_time: horizons[0], horizons, hat_values, theta_values: theta })
}

/// M-based Θ^{t_i} on path p with Θ̂^{t_i}_s = V_0 exp(Θ^{t_i}_s + ½λ²[(s−t_i)^{2H} − s^{2H}]).
pub fn bergomi_theta(ensemble: &PathEnsemble, params: &RoughBergomiParams, p: usize, i: usize) -> Result<ForwardVarianceCurve, RoughVolError> {
    Scheme::bergomi(*params, ensemble.grid)?.forward_curve(ensemble, p, i)
}
