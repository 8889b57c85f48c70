//! Finite-difference path derivatives, singular pairings and an empirical check
//! of the functional Itô formula along simulated paths.

mod functionals;

pub use functionals::{ConstantFunctional, PathIntegral, SingularWeightIntegral, TerminalSquare, TerminalValue};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gauss::DerivativeBundle;
use crate::kernel::{Coefficients, History};
use crate::path::{Direction, Path};
use crate::simulate::{theta_field_with_plan, PathEnsemble, SimError, StepPlan};
use crate::stats::SlopeFit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitoError {
    #[error("functional evaluation failed: {0}")]
    Eval(String),
    #[error("finite-difference config: {0}")]
    Config(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("singular pairing did not converge ({reason}); values {values:?} at deltas {deltas:?}")]
    NonConvergence { reason: String, deltas: Vec<f64>, values: Vec<f64> },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// u(t, ω) on concatenated paths, optionally with closed-form derivatives.
pub trait Functional: Sync {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError>;

    fn closed_derivatives(&self, _t: f64, _path: &Path) -> Option<Result<DerivativeBundle, FitoError>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FdScheme {
    Central,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FDConfig {
    /// Directional step; `None` means 1e-4·(1+‖ω‖).
    pub epsilon: Option<f64>,
    pub time_step: f64,
    pub scheme: FdScheme,
}

const STEP_RANGE: (f64, f64) = (1e-8, 1e-2);

impl FDConfig {
    pub fn new(epsilon: Option<f64>, time_step: f64, scheme: FdScheme) -> Result<Self, FitoError> {
        let ok = |v: f64| v >= STEP_RANGE.0 && v <= STEP_RANGE.1;
        if let Some(e) = epsilon {
            if !ok(e) {
                return Err(FitoError::Config(format!("epsilon {e} outside [1e-8, 1e-2]")));
            }
        }
        if !ok(time_step) {
            return Err(FitoError::Config(format!("time step {time_step} outside [1e-8, 1e-2]")));
        }
        Ok(Self { epsilon, time_step, scheme })
    }

    /// Defaults for a grid of step dt: adaptive ε, time step dt/4, central differences.
    pub fn for_grid(dt: f64) -> Self {
        Self { epsilon: None, time_step: (0.25 * dt).clamp(STEP_RANGE.0, STEP_RANGE.1), scheme: FdScheme::Central }
    }

    fn eps(&self, path: &Path) -> f64 {
        self.epsilon.unwrap_or_else(|| (1e-4 * (1.0 + path.sup_norm())).clamp(STEP_RANGE.0, STEP_RANGE.1))
    }
}

fn finite(v: f64, what: &str) -> Result<f64, FitoError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FitoError::Eval(format!("{what} is not finite")))
    }
}

/// a·η₁ + b·η₂.
struct Combo<'a> {
    a: f64,
    e1: &'a dyn Direction,
    b: f64,
    e2: &'a dyn Direction,
}

impl Direction for Combo<'_> {
    fn at(&self, s: f64, out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.e1.at(s, out);
        self.e2.at(s, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = self.a * *o + self.b * t;
        }
    }
}

/// ⟨∂_ω u(t,ω), η⟩ by finite differences of ω + εη·1_{[t,T]}.
pub fn directional_derivative(u: &dyn Functional, t: f64, omega: &Path, eta: &dyn Direction, cfg: &FDConfig) -> Result<f64, FitoError> {
    let eps = cfg.eps(omega);
    let up = u.eval(t, &omega.perturbed(t, eps, eta))?;
    let v = match cfg.scheme {
        FdScheme::Central => (up - u.eval(t, &omega.perturbed(t, -eps, eta))?) / (2.0 * eps),
        FdScheme::Forward => (up - u.eval(t, omega)?) / eps,
    };
    finite(v, "directional derivative")
}

/// ⟨∂²_ωω u(t,ω), (η₁,η₂)⟩ by nested central differences.
pub fn second_directional(
    u: &dyn Functional,
    t: f64,
    omega: &Path,
    eta1: &dyn Direction,
    eta2: &dyn Direction,
    cfg: &FDConfig,
) -> Result<f64, FitoError> {
    let eps = cfg.eps(omega);
    let at = |a: f64, b: f64| u.eval(t, &omega.perturbed(t, 1.0, &Combo { a, e1: eta1, b, e2: eta2 }));
    let v = ((at(eps, eps)? - at(eps, -eps)?) - (at(-eps, eps)? - at(-eps, -eps)?)) / (4.0 * eps * eps);
    finite(v, "second directional derivative")
}

/// [u(t+δ, ω) − u(t, ω)]/δ with ω held fixed.
pub fn right_time_derivative(u: &dyn Functional, t: f64, omega: &Path, cfg: &FDConfig) -> Result<f64, FitoError> {
    let dt = cfg.time_step;
    if t + dt > omega.end() + 1e-15 {
        return Err(FitoError::Domain(format!("t + δ = {} beyond the horizon {}", t + dt, omega.end())));
    }
    finite((u.eval(t + dt, omega)? - u.eval(t, omega)?) / dt, "time derivative")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PairingKind {
    Drift,
    Diffusion { column: usize },
    Second { column: usize },
}

/// Truncated-limit pairing sequence and its fitted rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularPairing {
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    pub extrapolated: f64,
    /// β in |v(δ) − v(δ/2)| ~ δ^β; infinite when the sequence is constant.
    pub observed_rate: f64,
    pub r_squared: f64,
    pub fit: Option<SlopeFit>,
}

/// φ^{δ,t,ω}(s) = φ(s ∨ (t+δ); t, ω) for s ≥ t, zero before t; one component of a coefficient.
pub struct TruncatedCoefficient<'a> {
    coeff: &'a dyn Coefficients,
    times: Vec<f64>,
    states: Vec<f64>,
    t: f64,
    delta: f64,
    kind: PairingKind,
}

impl<'a> TruncatedCoefficient<'a> {
    pub fn new(coeff: &'a dyn Coefficients, omega: &Path, t: f64, delta: f64, kind: PairingKind) -> Self {
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (j, &s) in omega.times().iter().enumerate() {
            if s < t {
                times.push(s);
                states.extend_from_slice(omega.node(j));
            }
        }
        // the history ends at the right-continuous value ω_t
        times.push(t);
        states.extend(omega.value_at(t));
        Self { coeff, times, states, t, delta, kind }
    }
}

impl Direction for TruncatedCoefficient<'_> {
    fn at(&self, s: f64, out: &mut [f64]) {
        if s < self.t {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let d = self.coeff.dim_state();
        let k = self.coeff.dim_noise();
        let hist = History::new(&self.times, &self.states, d);
        let target = s.max(self.t + self.delta);
        match self.kind {
            PairingKind::Drift => self.coeff.drift(target, &hist, out),
            PairingKind::Diffusion { column } | PairingKind::Second { column } => {
                let mut m = vec![0.0; d * k];
                self.coeff.diffusion(target, &hist, &mut m);
                for c in 0..d {
                    out[c] = m[c * k + column];
                }
            }
        }
    }
}

/// Copy of ω with nodes at t+δ_n, a uniform block on [t, t+δ_min] and a
/// geometric grid (16 nodes per octave) up to the horizon.
pub fn refined_path(omega: &Path, t: f64, deltas: &[f64]) -> Path {
    let end = omega.end();
    let dmin = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut extra: Vec<f64> = deltas.iter().map(|d| t + d).filter(|&s| s <= end).collect();
    for j in 1..8 {
        extra.push(t + dmin * j as f64 / 8.0);
    }
    let ratio = 2f64.powf(1.0 / 16.0);
    let mut gap = dmin;
    while t + gap < end {
        extra.push(t + gap);
        gap *= ratio;
    }
    extra.push(t);
    omega.with_nodes(&extra)
}

fn pairing_value(
    u: &dyn Functional,
    t: f64,
    path: &Path,
    eta: &dyn Direction,
    kind: PairingKind,
    cfg: &FDConfig,
    closed: Option<&DerivativeBundle>,
) -> Result<f64, FitoError> {
    match (kind, closed) {
        (PairingKind::Second { .. }, Some(b)) => Ok(b.second(eta, eta)),
        (_, Some(b)) => Ok(b.first(eta)),
        (PairingKind::Second { .. }, None) => second_directional(u, t, path, eta, eta, cfg),
        (_, None) => directional_derivative(u, t, path, eta, cfg),
    }
}

/// Pairings of u's derivatives with the truncated coefficient along δ_n = 2^{-n},
/// a log-log fit of successive differences, and a geometric-tail extrapolation.
pub fn singular_pairing(
    u: &dyn Functional,
    t: f64,
    omega: &Path,
    coeff: &dyn Coefficients,
    kind: PairingKind,
    levels: std::ops::RangeInclusive<u32>,
    cfg: &FDConfig,
    use_closed: bool,
) -> Result<SingularPairing, FitoError> {
    let deltas: Vec<f64> = levels.map(|n| 2f64.powi(-(n as i32))).collect();
    if deltas.len() < 6 {
        return Err(FitoError::Config("need at least 6 truncation levels for a 5-point fit".into()));
    }
    let path = refined_path(omega, t, &deltas);
    let closed = if use_closed {
        match u.closed_derivatives(t, &path) {
            Some(b) => Some(b?),
            None => return Err(FitoError::Config("functional has no closed-form derivatives".into())),
        }
    } else {
        None
    };
    let values = deltas
        .iter()
        .map(|&delta| {
            let eta = TruncatedCoefficient::new(coeff, &path, t, delta, kind);
            pairing_value(u, t, &path, &eta, kind, cfg, closed.as_ref())
        })
        .collect::<Result<Vec<f64>, FitoError>>()?;
    fit_pairing(deltas, values)
}

/// Rate fit and extrapolation for a pairing sequence on δ_n = 2^{-n}.
pub fn fit_pairing(deltas: Vec<f64>, values: Vec<f64>) -> Result<SingularPairing, FitoError> {
    let last = *values.last().unwrap();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    if diffs.iter().all(|&d| d <= 1e-12 * (1.0 + scale)) {
        return Ok(SingularPairing {
            deltas,
            values,
            extrapolated: last,
            observed_rate: f64::INFINITY,
            r_squared: 1.0,
            fit: None,
        });
    }
    if diffs.iter().any(|&d| d == 0.0) {
        return Err(FitoError::NonConvergence { reason: "zero difference inside a non-constant sequence".into(), deltas, values });
    }
    let x: Vec<f64> = deltas[..diffs.len()].iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let fit = SlopeFit::fit(&x, &y);
    if !(fit.r_squared >= 0.9) || !(fit.slope > 0.0) {
        return Err(FitoError::NonConvergence {
            reason: format!("rate fit slope {:.3}, r² {:.3}", fit.slope, fit.r_squared),
            deltas,
            values,
        });
    }
    let n = values.len();
    let r = 2f64.powf(-fit.slope);
    let extrapolated = last + (values[n - 1] - values[n - 2]) * r / (1.0 - r);
    Ok(SingularPairing { deltas, values, extrapolated, observed_rate: fit.slope, r_squared: fit.r_squared, fit: Some(fit) })
}

/// Mismatch statistics of the telescoped Itô expansion on one grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoCertificate {
    pub n_steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    pub rms: f64,
    pub mean: f64,
    pub max_abs: f64,
}

/// Refinement study across coupled grids.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoReport {
    pub grid_sizes: Vec<usize>,
    pub rms_mismatch: Vec<f64>,
    pub fitted_order: f64,
    pub fit: SlopeFit,
    pub certificates: Vec<ItoCertificate>,
    pub pairing_rates: Vec<f64>,
}

/// Scheme direction from source i: zero up to t_i, the step weights after.
pub(crate) fn step_direction(plan: &StepPlan<'_>, hist: &History<'_>, i: usize, d: usize, k: usize, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut drift = vec![0.0; (n + 1) * d];
    let mut diff = vec![vec![0.0; (n + 1) * d]; k];
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * k];
    for j in i + 1..=n {
        plan.step_coefficients(i, j, hist, &mut b, &mut s);
        drift[j * d..(j + 1) * d].copy_from_slice(&b);
        for l in 0..k {
            for c in 0..d {
                diff[l][j * d + c] = s[c * k + l];
            }
        }
    }
    (drift, diff)
}

/// Sum over steps of [∂_t u + ⟨∂u,b⟩ + ½Σ⟨∂²u,(σ_l,σ_l)⟩]Δt + Σ⟨∂u,σ_l⟩ΔW_l,
/// compared with u(T, X) − u(0, Θ^0), for one path.
fn path_mismatch(
    u: &dyn Functional,
    plan: &StepPlan<'_>,
    ensemble: &PathEnsemble,
    p: usize,
    cfg: &FDConfig,
) -> Result<f64, FitoError> {
    let field = theta_field_with_plan(plan, ensemble, p)?;
    let grid = ensemble.grid;
    let n = grid.n_steps;
    let d = ensemble.dim_state;
    let k = ensemble.dim_noise;
    let dt = grid.dt();
    let nodes = grid.nodes();
    let states = ensemble.states_of(p);
    let start = u.eval(0.0, &field.concat(0).path)?;
    let end = u.eval(grid.horizon, &field.concat(n).path)?;
    let mut total = 0.0;
    let mut tcfg = *cfg;
    tcfg.time_step = cfg.time_step.min(dt);
    for i in 0..n {
        let cp = field.concat(i);
        let t = nodes[i];
        let omega = &cp.path;
        let hist = History::new(&nodes[..=i], &states[..(i + 1) * d], d);
        let (drift, diff) = step_direction(plan, &hist, i, d, k, n);
        let base = u.eval(t, omega)?;
        let mut step = right_time_derivative(u, t, omega, &tcfg)? * dt;
        if drift.iter().any(|&v| v != 0.0) {
            let eta = Path::new(nodes.clone(), drift, d).expect("grid nodes");
            step += directional_derivative(u, t, omega, &eta, cfg)? * dt;
        }
        let dw = ensemble.increment(p, i);
        for (l, col) in diff.into_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                continue;
            }
            let eta = Path::new(nodes.clone(), col, d).expect("grid nodes");
            let eps = cfg.eps(omega);
            let up = u.eval(t, &omega.perturbed(t, eps, &eta))?;
            let dn = u.eval(t, &omega.perturbed(t, -eps, &eta))?;
            let first = (up - dn) / (2.0 * eps);
            let second = (up - 2.0 * base + dn) / (eps * eps);
            step += first * dw[l] + 0.5 * second * dt;
        }
        total += step;
    }
    finite((end - start) - total, "Itô mismatch")
}

/// Telescoping check of the functional Itô formula on every path of `ensemble`.
pub fn ito_certify(
    u: &dyn Functional,
    coeff: &dyn Coefficients,
    ensemble: &PathEnsemble,
    cfg: &FDConfig,
) -> Result<ItoCertificate, FitoError> {
    let plan = StepPlan::new(coeff, ensemble.grid);
    let mismatches = (0..ensemble.path_count)
        .into_par_iter()
        .map(|p| path_mismatch(u, &plan, ensemble, p, cfg))
        .collect::<Result<Vec<f64>, FitoError>>()?;
    let n = mismatches.len() as f64;
    Ok(ItoCertificate {
        n_steps: ensemble.grid.n_steps,
        dt: ensemble.grid.dt(),
        n_paths: ensemble.path_count,
        rms: (mismatches.iter().map(|m| m * m).sum::<f64>() / n).sqrt(),
        mean: mismatches.iter().sum::<f64>() / n,
        max_abs: mismatches.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

/// Certification on the fine ensemble and on coarsenings of the same Brownian paths.
pub fn refinement_study(
    u: &dyn Functional,
    coeff: &dyn Coefficients,
    fine: &PathEnsemble,
    factors: &[usize],
) -> Result<ItoReport, FitoError> {
    let mut certificates = Vec::new();
    for &f in factors {
        let e = if f == 1 { fine.clone() } else { fine.coarsen(coeff, f)? };
        let cfg = FDConfig::for_grid(e.grid.dt());
        certificates.push(ito_certify(u, coeff, &e, &cfg)?);
    }
    certificates.sort_by_key(|c| c.n_steps);
    if certificates.len() < 2 {
        return Err(FitoError::Config("a refinement study needs at least two grids".into()));
    }
    let x: Vec<f64> = certificates.iter().map(|c| c.dt.ln()).collect();
    let y: Vec<f64> = certificates.iter().map(|c| c.rms.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = SlopeFit::fit(&x, &y);
    Ok(ItoReport {
        grid_sizes: certificates.iter().map(|c| c.n_steps).collect(),
        rms_mismatch: certificates.iter().map(|c| c.rms).collect(),
        fitted_order: fit.slope,
        fit,
        certificates,
        pairing_rates: Vec::new(),
    })
}
