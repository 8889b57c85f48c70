//! Nested Monte Carlo pricing, finite-difference hedge ratios and discrete
//! rebalancing experiments.
//!
//! Conditioning on F_t means carrying (S_t, Θ^t on [t, T]). The future
//! variance is re-simulated from the Θ row with fresh increments, so the
//! inner paths see exactly the outer scheme's law. Bumps share inner draws.
//! The discounted stock factor S_T/S_t (or its mixing analogue
//! exp(ρJ − ½ρ²I)) has mean exactly one on the grid and serves as a control
//! variate for prices and stock deltas.
//!
//! The forward-variance position is ΔC/ΔΘ̂^t_T under a bump of Θ^t along
//! a^t_s = (s−t)^{H−½}. For λ = 0 (and for Bergomi, up to the 1/Θ̂^t_T
//! factor) this equals (T−t)^{½−H}⟨∂_ω u, a^t⟩, which is reported as
//! `delta_fv_direct`. For λ > 0 the Heston map Θ^t ↦ Θ̂^t_T is not a pointwise
//! scaling, so the direct form is not the replicating position.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, RoughVolError, Scheme, STOCK_CAP};
use crate::io::{write_columns, IoError};
use crate::rng::{derive_seed, fill_normal, path_stream};
use crate::simulate::PathEnsemble;
use crate::special::{bs_call, bs_put};
use crate::stats::{quantile, MeanSe};

pub type TerminalPayoff = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RunningPayoff = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Claim g(S_T) + ∫_t^T f(r, S_r) dr (left-point sum on the grid).
#[derive(Clone)]
pub enum Claim {
    Call { strike: f64 },
    Put { strike: f64 },
    Stock,
    Path { name: String, terminal: TerminalPayoff, running: Option<RunningPayoff> },
}

impl fmt::Debug for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Claim::Call { strike } => write!(f, "Call({strike})"),
            Claim::Put { strike } => write!(f, "Put({strike})"),
            Claim::Stock => write!(f, "Stock"),
            Claim::Path { name, running, .. } => write!(f, "Path({name}, running: {})", running.is_some()),
        }
    }
}

impl Claim {
    fn terminal(&self, s: f64) -> f64 {
        match self {
            Claim::Call { strike } => (s - strike).max(0.0),
            Claim::Put { strike } => (strike - s).max(0.0),
            Claim::Stock => s,
            Claim::Path { terminal, .. } => terminal(s),
        }
    }

    /// Value along stock values `s` at `times` (both from the anchor to T).
    pub fn path_value(&self, times: &[f64], s: &[f64]) -> f64 {
        let mut v = self.terminal(s[s.len() - 1]);
        if let Claim::Path { running: Some(f), .. } = self {
            for k in 0..s.len() - 1 {
                v += f(times[k], s[k]) * (times[k + 1] - times[k]);
            }
        }
        v
    }

    /// Conditional value given the variance path when S_T is lognormal with
    /// log-mean shift ρJ − ½ρ²I and variance (1−ρ²)I.
    fn mixing_value(&self, s: f64, rho: f64, int_v: f64, int_sqrt_v_dw: f64) -> Option<f64> {
        let s_eff = s * (rho * int_sqrt_v_dw - 0.5 * rho * rho * int_v).exp();
        let w = (1.0 - rho * rho) * int_v;
        match self {
            Claim::Call { strike } => Some(bs_call(s_eff, *strike, w)),
            Claim::Put { strike } => Some(bs_put(s_eff, *strike, w)),
            Claim::Stock => Some(s_eff),
            Claim::Path { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMethod {
    /// Simulate the stock and average the payoff.
    MonteCarlo,
    /// Average the closed-form conditional price given the variance path.
    Mixing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NestedConfig {
    pub inner_paths: usize,
    pub seed: u64,
    pub method: PricingMethod,
    /// Relative stock bump for the central difference.
    pub bump_stock: f64,
    /// Size of the Θ bump at s = T, relative to V_0 (Heston) or absolute on the log scale (Bergomi).
    pub bump_fv: f64,
    /// Use the unit-mean stock factor as a control variate.
    pub control_variate: bool,
}

impl Default for NestedConfig {
    fn default() -> Self {
        NestedConfig { inner_paths: 200, seed: 0, method: PricingMethod::Mixing, bump_stock: 0.01, bump_fv: 0.01, control_variate: true }
    }
}

/// What is known at grid index `index`: S_t and Θ^t on t_index..=T.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedState {
    pub index: usize,
    pub stock: f64,
    pub theta: Vec<f64>,
}

impl ObservedState {
    /// The time-0 state (Θ^0 is flat).
    pub fn initial(scheme: &Scheme) -> Self {
        ObservedState { index: 0, stock: scheme.model.s0(), theta: vec![scheme.sum_origin(); scheme.grid.n_steps + 1] }
    }

    pub fn from_path(scheme: &Scheme, ensemble: &PathEnsemble, p: usize, index: usize) -> Result<Self, RoughVolError> {
        let theta = scheme.theta_rows(ensemble, p, &[index])?.pop().expect("one row");
        Ok(ObservedState { index, stock: ensemble.state(p, index)[0], theta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PriceEstimate {
    pub price: f64,
    pub se: f64,
    pub n_paths: usize,
}

/// Inner values[q][row * levels + level] with shared draws per inner path q,
/// followed by one unit-mean stock factor per row.
fn inner_values(
    scheme: &Scheme,
    claim: &Claim,
    index: usize,
    levels: &[f64],
    rows: &[Vec<f64>],
    cfg: &NestedConfig,
) -> Result<Vec<Vec<f64>>, RoughVolError> {
    let n = scheme.grid.n_steps;
    if index >= n {
        return Err(RoughVolError::Config("pricing needs an anchor before the horizon".into()));
    }
    if rows.iter().any(|r| r.len() != n + 1 - index) {
        return Err(RoughVolError::Config(format!("Θ row must have {} values", n + 1 - index)));
    }
    if cfg.inner_paths < 2 {
        return Err(RoughVolError::Config("need at least two inner paths".into()));
    }
    if cfg.method == PricingMethod::Mixing && matches!(claim, Claim::Path { .. }) {
        return Err(RoughVolError::Config("the mixing estimator needs a call, put or stock claim".into()));
    }
    let m = n - index;
    let h = scheme.grid.dt();
    let rho = scheme.model.correlation();
    let rho_bar = (1.0 - rho * rho).max(0.0).sqrt();
    let times = &scheme.times()[index..];
    let out = (0..cfg.inner_paths)
        .into_par_iter()
        .map(|q| {
            let mut rng = path_stream(cfg.seed, q as u64);
            let mut dw2 = vec![0.0; m];
            fill_normal(&mut rng, h.sqrt(), &mut dw2);
            let mut dw1 = vec![0.0; m];
            if cfg.method == PricingMethod::MonteCarlo {
                fill_normal(&mut rng, h.sqrt(), &mut dw1);
            }
            let mut sums = vec![0.0; m + 1];
            let mut v = vec![0.0; m];
            let mut rel = vec![1.0; m + 1];
            let mut s_path = vec![0.0; m + 1];
            let mut vals = Vec::with_capacity(rows.len() * (levels.len() + 1));
            let mut controls = Vec::with_capacity(rows.len());
            for row in rows {
                scheme.resimulate_variance(index, row, &dw2, &mut sums, &mut v);
                match cfg.method {
                    PricingMethod::Mixing => {
                        let mut int_v = 0.0;
                        let mut int_dw = 0.0;
                        for k in 0..m {
                            let vp = v[k].max(0.0);
                            int_v += vp * h;
                            int_dw += vp.sqrt() * dw2[k];
                        }
                        for &s in levels {
                            vals.push(claim.mixing_value(s, rho, int_v, int_dw).expect("checked above"));
                        }
                        controls.push((rho * int_dw - 0.5 * rho * rho * int_v).exp());
                    }
                    PricingMethod::MonteCarlo => {
                        let mut log_x = 0.0;
                        for k in 0..m {
                            let vp = v[k].max(0.0);
                            log_x += vp.sqrt() * (rho_bar * dw1[k] + rho * dw2[k]) - 0.5 * vp * h;
                            rel[k + 1] = log_x.exp();
                        }
                        for &s in levels {
                            for k in 0..=m {
                                s_path[k] = (s * rel[k]).min(STOCK_CAP);
                            }
                            vals.push(claim.path_value(times, &s_path));
                        }
                        controls.push(rel[m]);
                    }
                }
            }
            vals.extend(controls);
            vals
        })
        .collect();
    Ok(out)
}

/// Mean of `y` with the control `c` (known mean `c_mean`) when enabled; the
/// standard error comes from the regression residuals.
fn controlled_mean(y: &[f64], c: &[f64], c_mean: f64, enabled: bool) -> MeanSe {
    let plain = MeanSe::of(y);
    if !enabled {
        return plain;
    }
    let cs = MeanSe::of(c);
    let var_c = cs.std * cs.std;
    if var_c == 0.0 {
        return plain;
    }
    let cov = y.iter().zip(c).map(|(a, b)| (a - plain.mean) * (b - cs.mean)).sum::<f64>() / (y.len() - 1) as f64;
    let beta = cov / var_c;
    let resid: Vec<f64> = y.iter().zip(c).map(|(a, b)| a - beta * (b - c_mean)).collect();
    let mut est = MeanSe::of(&resid);
    est.mean = plain.mean - beta * (cs.mean - c_mean);
    est
}

fn column(values: &[Vec<f64>], c: usize) -> Vec<f64> {
    values.iter().map(|v| v[c]).collect()
}

/// E[claim | S_t, Θ^t] by nested re-simulation.
pub fn price_claim(scheme: &Scheme, claim: &Claim, state: &ObservedState, cfg: &NestedConfig) -> Result<PriceEstimate, RoughVolError> {
    let values = inner_values(scheme, claim, state.index, &[state.stock], std::slice::from_ref(&state.theta), cfg)?;
    let control: Vec<f64> = column(&values, 1).iter().map(|c| state.stock * c).collect();
    let est = controlled_mean(&column(&values, 0), &control, state.stock, cfg.control_variate);
    Ok(PriceEstimate { price: est.mean, se: est.se, n_paths: est.n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HedgeRatios {
    pub price: PriceEstimate,
    pub delta_stock: f64,
    pub delta_stock_se: f64,
    /// ΔC/ΔΘ̂^t_T under the a^t bump: the position in the forward variance Θ̂^·_T.
    pub delta_fv: f64,
    pub delta_fv_se: f64,
    /// (T−t)^{½−H}·ΔC/ε for the bump ε·a^t, divided by Θ̂^t_T for Bergomi.
    pub delta_fv_direct: f64,
    pub hat_terminal: f64,
    /// Some finite-difference standard error exceeds half its estimate.
    pub unstable: bool,
}

#[derive(Clone, Copy)]
struct Needs {
    stock: bool,
    fv: bool,
}

fn ratios_inner(scheme: &Scheme, claim: &Claim, state: &ObservedState, cfg: &NestedConfig, needs: Needs) -> Result<HedgeRatios, RoughVolError> {
    let i = state.index;
    let n = scheme.grid.n_steps;
    let t = scheme.times()[i];
    let horizon = scheme.grid.horizon;
    let hurst = scheme.model.hurst();
    let hat_terminal = scheme.hat_terminal(i, &state.theta);

    let s = state.stock;
    let hs = cfg.bump_stock * s;
    let levels: Vec<f64> = if needs.stock { vec![s, s + hs, s - hs] } else { vec![s] };
    let mut rows = vec![state.theta.clone()];
    let scale = match scheme.model {
        Model::Heston(p) => p.v0.max(1e-4),
        Model::Bergomi(_) => 1.0,
    };
    let eps = cfg.bump_fv * scale * (horizon - t).powf(0.5 - hurst);
    if needs.fv {
        let a = super::DirectionA { anchor: t, hurst };
        let up = (i..=n).map(|j| state.theta[j - i] + eps * a.value(scheme.times()[j])).collect();
        let down = (i..=n).map(|j| state.theta[j - i] - eps * a.value(scheme.times()[j])).collect();
        rows.push(up);
        rows.push(down);
    }
    let values = inner_values(scheme, claim, i, &levels, &rows, cfg)?;
    let nl = levels.len();
    let cv = cfg.control_variate;
    let control = column(&values, rows.len() * nl);
    let scaled: Vec<f64> = control.iter().map(|c| s * c).collect();
    let base = controlled_mean(&column(&values, 0), &scaled, s, cv);
    let price = PriceEstimate { price: base.mean, se: base.se, n_paths: base.n };

    let (mut delta_stock, mut delta_stock_se) = (0.0, 0.0);
    if needs.stock {
        let d: Vec<f64> = values.iter().map(|v| (v[1] - v[2]) / (2.0 * hs)).collect();
        let e = controlled_mean(&d, &control, 1.0, cv);
        delta_stock = e.mean;
        delta_stock_se = e.se;
    }
    let (mut delta_fv, mut delta_fv_se, mut delta_fv_direct) = (0.0, 0.0, 0.0);
    if needs.fv {
        let d_hat = scheme.hat_terminal(i, &rows[1]) - scheme.hat_terminal(i, &rows[2]);
        let diff: Vec<f64> = values.iter().map(|v| v[nl] - v[2 * nl]).collect();
        let c_diff: Vec<f64> = values.iter().map(|v| s * (v[3 * nl + 1] - v[3 * nl + 2])).collect();
        let e = controlled_mean(&diff, &c_diff, 0.0, cv);
        delta_fv = e.mean / d_hat;
        delta_fv_se = e.se / d_hat.abs();
        delta_fv_direct = (horizon - t).powf(0.5 - hurst) * e.mean / (2.0 * eps);
        if let Model::Bergomi(_) = scheme.model {
            delta_fv_direct /= hat_terminal;
        }
    }
    let unstable = (needs.stock && delta_stock_se > 0.5 * delta_stock.abs()) || (needs.fv && delta_fv_se > 0.5 * delta_fv.abs());
    Ok(HedgeRatios { price, delta_stock, delta_stock_se, delta_fv, delta_fv_se, delta_fv_direct, hat_terminal, unstable })
}

/// Central-difference positions in the stock and in Θ̂^·_T at the observed state.
pub fn hedge_ratios(scheme: &Scheme, claim: &Claim, state: &ObservedState, cfg: &NestedConfig) -> Result<HedgeRatios, RoughVolError> {
    ratios_inner(scheme, claim, state, cfg, Needs { stock: true, fv: true })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeMode {
    Unhedged,
    StockOnly,
    StockAndFv,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HedgeConfig {
    /// Number of rebalancing dates; must divide the number of grid steps.
    pub rebalance_dates: usize,
    pub outer_paths: usize,
    pub seed: u64,
    pub nested: NestedConfig,
    /// Inner paths for the time-0 price.
    pub initial_price_paths: usize,
    /// Upper bound on kernel-sum operations across all nested simulations.
    pub max_work: f64,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig {
            rebalance_dates: 50,
            outer_paths: 1000,
            seed: 0,
            nested: NestedConfig::default(),
            initial_price_paths: 20_000,
            max_work: 1e12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PnlSummary {
    pub mean: f64,
    pub std: f64,
    pub se: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl PnlSummary {
    pub fn of(pnl: &[f64]) -> Self {
        let e = MeanSe::of(pnl);
        let mut sorted = pnl.to_vec();
        sorted.sort_by(f64::total_cmp);
        PnlSummary {
            mean: e.mean,
            std: e.std,
            se: e.se,
            q05: quantile(&sorted, 0.05),
            q50: quantile(&sorted, 0.5),
            q95: quantile(&sorted, 0.95),
        }
    }
}

/// Terminal hedging error payoff − initial price − hedge gains, per outer path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HedgeReport {
    pub mode: HedgeMode,
    pub times: Vec<f64>,
    /// Positions [path][date].
    pub delta_stock: Vec<Vec<f64>>,
    pub delta_fv: Vec<Vec<f64>>,
    pub pnl_paths: Vec<f64>,
    pub summary: PnlSummary,
    pub initial_price: PriceEstimate,
    pub unstable_ratios: usize,
    pub cap_hits: usize,
}

impl HedgeReport {
    /// CSV with columns (path, pnl).
    pub fn write_pnl_csv<W: Write>(&self, out: W) -> Result<(), IoError> {
        let idx: Vec<f64> = (0..self.pnl_paths.len()).map(|p| p as f64).collect();
        write_columns(out, &["path", "pnl"], &[&idx, &self.pnl_paths])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HedgeComparison {
    pub unhedged: HedgeReport,
    pub stock_only: HedgeReport,
    pub stock_and_fv: HedgeReport,
}

struct PathOutcome {
    delta_stock: Vec<f64>,
    delta_fv: Vec<f64>,
    payoff: f64,
    stock_gain: Vec<f64>,
    fv_gain: Vec<f64>,
    unstable: usize,
}

fn run(scheme: &Scheme, claim: &Claim, cfg: &HedgeConfig, modes: &[HedgeMode]) -> Result<Vec<HedgeReport>, RoughVolError> {
    let n = scheme.grid.n_steps;
    let r = cfg.rebalance_dates;
    if r == 0 || n % r != 0 {
        return Err(RoughVolError::Config(format!("{r} rebalance dates do not divide {n} steps")));
    }
    if cfg.outer_paths < 2 {
        return Err(RoughVolError::Config("need at least two outer paths".into()));
    }
    let need_fv = modes.contains(&HedgeMode::StockAndFv);
    let need_stock = need_fv || modes.contains(&HedgeMode::StockOnly);
    let rows_per_date = if need_fv { 3.0 } else { 1.0 };
    let work = if need_stock {
        cfg.outer_paths as f64 * r as f64 * cfg.nested.inner_paths as f64 * rows_per_date * (n * n) as f64 / 6.0
    } else {
        0.0
    };
    if work > cfg.max_work {
        return Err(RoughVolError::Config(format!(
            "nested budget infeasible: about {work:.3e} kernel-sum operations, limit {:.3e}",
            cfg.max_work
        )));
    }
    let stride = n / r;
    let dates: Vec<usize> = (0..=r).map(|k| k * stride).collect();
    let times: Vec<f64> = dates[..r].iter().map(|&i| scheme.times()[i]).collect();

    let init_cfg = NestedConfig { inner_paths: cfg.initial_price_paths, seed: derive_seed(cfg.seed, &[2]), ..cfg.nested };
    let initial_price = price_claim(scheme, claim, &ObservedState::initial(scheme), &init_cfg)?;

    let paths = scheme.simulate(cfg.outer_paths, derive_seed(cfg.seed, &[0]))?;
    let ens = &paths.ensemble;
    let needs = Needs { stock: need_stock, fv: need_fv };
    let outcomes: Vec<Result<PathOutcome, RoughVolError>> = (0..cfg.outer_paths)
        .into_par_iter()
        .map(|p| {
            let rows = scheme.theta_rows(ens, p, &dates)?;
            let s: Vec<f64> = (0..=n).map(|i| ens.state(p, i)[0]).collect();
            let hats: Vec<f64> = dates.iter().zip(&rows).map(|(&i, row)| scheme.hat_terminal(i, row)).collect();
            let mut out = PathOutcome {
                delta_stock: vec![0.0; r],
                delta_fv: vec![0.0; r],
                payoff: claim.path_value(scheme.times(), &s),
                stock_gain: vec![0.0; r],
                fv_gain: vec![0.0; r],
                unstable: 0,
            };
            if need_stock {
                for k in 0..r {
                    let i = dates[k];
                    let state = ObservedState { index: i, stock: s[i], theta: rows[k].clone() };
                    let nested = NestedConfig { seed: derive_seed(cfg.seed, &[1, p as u64, k as u64]), ..cfg.nested };
                    let ratios = ratios_inner(scheme, claim, &state, &nested, needs)?;
                    out.delta_stock[k] = ratios.delta_stock;
                    out.delta_fv[k] = ratios.delta_fv;
                    out.stock_gain[k] = ratios.delta_stock * (s[dates[k + 1]] - s[i]);
                    out.fv_gain[k] = ratios.delta_fv * (hats[k + 1] - hats[k]);
                    out.unstable += ratios.unstable as usize;
                }
            }
            Ok(out)
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    Ok(modes
        .iter()
        .map(|&mode| {
            let (use_stock, use_fv) = match mode {
                HedgeMode::Unhedged => (false, false),
                HedgeMode::StockOnly => (true, false),
                HedgeMode::StockAndFv => (true, true),
            };
            let pnl_paths: Vec<f64> = outcomes
                .iter()
                .map(|o| {
                    let mut gains = 0.0;
                    for k in 0..r {
                        if use_stock {
                            gains += o.stock_gain[k];
                        }
                        if use_fv {
                            gains += o.fv_gain[k];
                        }
                    }
                    o.payoff - initial_price.price - gains
                })
                .collect();
            let zeros = vec![vec![0.0; r]; outcomes.len()];
            HedgeReport {
                mode,
                times: times.clone(),
                delta_stock: if use_stock { outcomes.iter().map(|o| o.delta_stock.clone()).collect() } else { zeros.clone() },
                delta_fv: if use_fv { outcomes.iter().map(|o| o.delta_fv.clone()).collect() } else { zeros },
                summary: PnlSummary::of(&pnl_paths),
                pnl_paths,
                initial_price,
                unstable_ratios: if use_stock { outcomes.iter().map(|o| o.unstable).sum() } else { 0 },
                cap_hits: paths.cap_hits,
            }
        })
        .collect())
}

/// One hedging mode on freshly simulated outer paths.
pub fn pnl_experiment(scheme: &Scheme, claim: &Claim, cfg: &HedgeConfig, mode: HedgeMode) -> Result<HedgeReport, RoughVolError> {
    Ok(run(scheme, claim, cfg, &[mode])?.pop().expect("one report"))
}

/// All three modes on the same outer paths and the same nested ratios.
pub fn hedge_experiment(scheme: &Scheme, claim: &Claim, cfg: &HedgeConfig) -> Result<HedgeComparison, RoughVolError> {
    let mut reports = run(scheme, claim, cfg, &[HedgeMode::Unhedged, HedgeMode::StockOnly, HedgeMode::StockAndFv])?;
    let stock_and_fv = reports.pop().expect("three reports");
    let stock_only = reports.pop().expect("three reports");
    let unhedged = reports.pop().expect("three reports");
    Ok(HedgeComparison { unhedged, stock_only, stock_and_fv })
}
