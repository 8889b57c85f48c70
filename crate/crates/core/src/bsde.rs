//! Backward regression Monte Carlo for Y_t = g(X) + ∫_t^T f(s,X,Y_s,Z_s)ds − ∫_t^T Z_s dW_s.
//!
//! Conditional expectations at t_i are regressions on features of (X_{t_i},
//! Θ^{t_i} at a few horizons), so Y and Z are adapted by construction. Y is
//! implicit in the driver and resolved by two Picard iterations per step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fito::{directional_derivative, step_direction, FDConfig, FitoError, Functional};
use crate::gauss::DerivativeBundle;
use crate::kernel::{Coefficients, History};
use crate::path::Path;
use crate::simulate::{theta_field_with_plan, PathEnsemble, SimError, StepPlan};
use crate::stats::MeanSe;

const GRAM_CHUNK: usize = 2048;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("regression at step {step} is rank deficient")]
    RankDeficient { step: usize },
    #[error("driver exceeds the declared Lipschitz bound {bound} (observed {observed})")]
    Lipschitz { bound: f64, observed: f64 },
    #[error("bsde config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fito(#[from] FitoError),
}

/// f(t, X on [0,t], y, z).
pub type DriverFn = Arc<dyn Fn(f64, &History<'_>, f64, &[f64]) -> f64 + Send + Sync>;
/// g(X on [0,T]).
pub type TerminalFn = Arc<dyn Fn(&History<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct BSDEProblem {
    pub driver: DriverFn,
    pub terminal: TerminalFn,
    pub coeff: Arc<dyn Coefficients>,
    pub lipschitz_bound: f64,
}

impl BSDEProblem {
    pub fn new(coeff: Arc<dyn Coefficients>, terminal: TerminalFn, driver: DriverFn, lipschitz_bound: f64) -> Result<Self, BsdeError> {
        if !(lipschitz_bound.is_finite() && lipschitz_bound >= 0.0) {
            return Err(BsdeError::Config(format!("Lipschitz bound must be finite and ≥ 0, got {lipschitz_bound}")));
        }
        Ok(Self { driver, terminal, coeff, lipschitz_bound })
    }

    /// f = 0.
    pub fn conditional_expectation(coeff: Arc<dyn Coefficients>, terminal: TerminalFn) -> Self {
        Self { driver: Arc::new(|_, _, _, _| 0.0), terminal, coeff, lipschitz_bound: 0.0 }
    }

    /// f = a·y + b·z.
    pub fn linear(coeff: Arc<dyn Coefficients>, terminal: TerminalFn, a: f64, b: Vec<f64>) -> Result<Self, BsdeError> {
        if b.len() != coeff.dim_noise() {
            return Err(BsdeError::Config("b needs one entry per noise component".into()));
        }
        let bound = a.abs().max(b.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let driver: DriverFn = Arc::new(move |_, _, y, z| a * y + b.iter().zip(z).map(|(u, v)| u * v).sum::<f64>());
        Self::new(coeff, terminal, driver, bound)
    }

    /// f = −r·y.
    pub fn discounted(coeff: Arc<dyn Coefficients>, terminal: TerminalFn, rate: f64) -> Result<Self, BsdeError> {
        let k = coeff.dim_noise();
        Self::linear(coeff, terminal, -rate, vec![0.0; k])
    }

    /// Checks |f(y₁,z₁) − f(y₂,z₂)| ≤ L(|y₁−y₂| + Σ|z₁−z₂|) on a few sampled states.
    pub fn check_lipschitz(&self, ensemble: &PathEnsemble) -> Result<(), BsdeError> {
        let n = ensemble.grid.n_steps;
        let d = ensemble.dim_state;
        let k = ensemble.dim_noise;
        let nodes = ensemble.grid.nodes();
        let probes: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-2.5, 3.0)];
        let mut worst = 0.0f64;
        for p in 0..ensemble.path_count.min(8) {
            for i in [0, n / 2, n.saturating_sub(1)] {
                let hist = History::new(&nodes[..=i], &ensemble.states_of(p)[..(i + 1) * d], d);
                let vals: Vec<(f64, f64, f64)> = probes
                    .iter()
                    .map(|&(y, z)| (y, z, (self.driver)(nodes[i], &hist, y, &vec![z; k])))
                    .collect();
                for a in &vals {
                    for b in &vals {
                        let dist = (a.0 - b.0).abs() + k as f64 * (a.1 - b.1).abs();
                        if dist > 0.0 {
                            worst = worst.max((a.2 - b.2).abs() / dist);
                        }
                    }
                }
            }
        }
        if worst > self.lipschitz_bound * (1.0 + 1e-9) + 1e-12 {
            return Err(BsdeError::Lipschitz { bound: self.lipschitz_bound, observed: worst });
        }
        Ok(())
    }
}

/// Expands the regression variables into features.
pub trait FeatureMap: Sync {
    fn len(&self, n_vars: usize) -> usize;
    fn expand(&self, vars: &[f64], out: &mut Vec<f64>);
    fn describe(&self, names: &[String]) -> String;
}

/// All monomials of total degree ≤ `degree` (1 or 2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialBasis {
    pub degree: u32,
}

impl Default for PolynomialBasis {
    fn default() -> Self {
        Self { degree: 2 }
    }
}

impl FeatureMap for PolynomialBasis {
    fn len(&self, n: usize) -> usize {
        match self.degree {
            0 => 1,
            1 => 1 + n,
            _ => 1 + n + n * (n + 1) / 2,
        }
    }

    fn expand(&self, vars: &[f64], out: &mut Vec<f64>) {
        out.push(1.0);
        if self.degree >= 1 {
            out.extend_from_slice(vars);
        }
        if self.degree >= 2 {
            for a in 0..vars.len() {
                for b in a..vars.len() {
                    out.push(vars[a] * vars[b]);
                }
            }
        }
    }

    fn describe(&self, names: &[String]) -> String {
        format!("polynomials of degree ≤ {} in ({})", self.degree.min(2), names.join(", "))
    }
}

/// Θ horizons as fractions of the remaining time: s = t_i + q(T − t_i), snapped to the grid.
pub const DEFAULT_THETA_COLUMNS: [f64; 2] = [1.0, 0.5];

fn column_index(i: usize, n: usize, q: f64) -> usize {
    (i + (q * (n - i) as f64).round() as usize).min(n)
}

fn variable_names(d: usize, columns: &[f64]) -> Vec<String> {
    let mut names: Vec<String> = (0..d).map(|c| format!("X{c}_t")).collect();
    for q in columns {
        for c in 0..d {
            names.push(format!("Θ{c}_t(t+{q}(T-t))"));
        }
    }
    names
}

/// Regression variables at step i: X_{t_i} and Θ^{t_i} at each horizon column.
/// Reads only states and increments before t_i.
pub fn regression_variables(plan: &StepPlan<'_>, ensemble: &PathEnsemble, p: usize, i: usize, columns: &[f64]) -> Vec<f64> {
    let d = ensemble.dim_state;
    let k = ensemble.dim_noise;
    let n = ensemble.grid.n_steps;
    let dt = ensemble.grid.dt();
    let states = ensemble.states_of(p);
    let mut vars = ensemble.state(p, i).to_vec();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * k];
    for &q in columns {
        let j = column_index(i, n, q);
        let mut theta = plan.coefficients().initial_state().to_vec();
        for r in 0..i {
            let hist = History::new(&plan.times()[..=r], &states[..(r + 1) * d], d);
            plan.step_coefficients(r, j, &hist, &mut b, &mut s);
            let dw = ensemble.increment(p, r);
            for c in 0..d {
                theta[c] += b[c] * dt + (0..k).map(|l| s[c * k + l] * dw[l]).sum::<f64>();
            }
        }
        vars.extend_from_slice(&theta);
    }
    vars
}

/// Column means and standard deviations (1 for constant columns).
fn standardization(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    let mut center = vec![0.0; width];
    for r in rows {
        for (c, x) in center.iter_mut().zip(r) {
            *c += x / n;
        }
    }
    let mut scale = vec![0.0; width];
    for r in rows {
        for ((s, x), c) in scale.iter_mut().zip(r).zip(&center) {
            *s += (x - c).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (center, scale)
}

struct Fit {
    fitted: Vec<Vec<f64>>,
    condition: f64,
}

/// Ridge least squares of each target on the row-major feature matrix, with
/// the Gram matrix summed chunk by chunk in a fixed order.
fn regress(features: &[f64], m: usize, targets: &[Vec<f64>], step: usize) -> Result<Fit, BsdeError> {
    let rows = features.len() / m;
    let nt = targets.len();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..rows.div_ceil(GRAM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; m * m];
            let mut r = vec![0.0; m * nt];
            for row in c * GRAM_CHUNK..((c + 1) * GRAM_CHUNK).min(rows) {
                let x = &features[row * m..(row + 1) * m];
                for a in 0..m {
                    for b in a..m {
                        g[a * m + b] += x[a] * x[b];
                    }
                    for (t, y) in targets.iter().enumerate() {
                        r[t * m + a] += x[a] * y[row];
                    }
                }
            }
            (g, r)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, nt);
    for (g, r) in &partials {
        for a in 0..m {
            for b in a..m {
                gram[(a, b)] += g[a * m + b];
            }
            for t in 0..nt {
                rhs[(a, t)] += r[t * m + a];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let trace = gram.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(BsdeError::RankDeficient { step });
    }
    for a in 0..m {
        gram[(a, a)] += RIDGE * trace;
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    let chol = gram.cholesky().ok_or(BsdeError::RankDeficient { step })?;
    let beta = chol.solve(&rhs);
    let fitted = (0..nt)
        .map(|t| {
            let coef: DVector<f64> = beta.column(t).into_owned();
            (0..rows)
                .into_par_iter()
                .map(|row| features[row * m..(row + 1) * m].iter().zip(coef.iter()).map(|(x, c)| x * c).sum())
                .collect()
        })
        .collect();
    Ok(Fit { fitted, condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BSDESolution {
    pub n_steps: usize,
    pub path_count: usize,
    pub dim_noise: usize,
    /// y[p·(N+1) + i]
    pub y_values: Vec<f64>,
    /// z[(p·N + i)·k + l]
    pub z_values: Vec<f64>,
    pub basis_spec: String,
    /// Per step i = 0..N−1 (regularized Gram matrix).
    pub condition_numbers: Vec<f64>,
    pub warnings: Vec<String>,
    pub y0: f64,
    /// Standard error of Y_0 from the pathwise sums g + Σ f Δt.
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverReport {
    pub y0: f64,
    pub standard_error: f64,
    pub condition_numbers: Vec<f64>,
    pub basis: String,
    pub warnings: Vec<String>,
}

impl BSDESolution {
    pub fn y(&self, p: usize, i: usize) -> f64 {
        self.y_values[p * (self.n_steps + 1) + i]
    }

    pub fn z(&self, p: usize, i: usize) -> &[f64] {
        let k = self.dim_noise;
        let at = (p * self.n_steps + i) * k;
        &self.z_values[at..at + k]
    }

    pub fn report(&self) -> SolverReport {
        SolverReport {
            y0: self.y0,
            standard_error: self.se,
            condition_numbers: self.condition_numbers.clone(),
            basis: self.basis_spec.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Backward Euler with regression on (X_{t_i}, Θ^{t_i}_{s}) for s at the given
/// horizon fractions (see [`DEFAULT_THETA_COLUMNS`]).
pub fn solve_lsmc(
    problem: &BSDEProblem,
    ensemble: &PathEnsemble,
    basis: &dyn FeatureMap,
    theta_columns: &[f64],
) -> Result<BSDESolution, BsdeError> {
    let coeff = problem.coeff.as_ref();
    if ensemble.dim_state != coeff.dim_state() || ensemble.dim_noise != coeff.dim_noise() {
        return Err(BsdeError::Config("ensemble and problem dimensions differ".into()));
    }
    if ensemble.path_count < 2 {
        return Err(BsdeError::Config("need at least two paths".into()));
    }
    if theta_columns.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(BsdeError::Config("theta columns are fractions in [0, 1]".into()));
    }
    problem.check_lipschitz(ensemble)?;
    let n = ensemble.grid.n_steps;
    let np = ensemble.path_count;
    let d = ensemble.dim_state;
    let k = ensemble.dim_noise;
    let dt = ensemble.grid.dt();
    let nodes = ensemble.grid.nodes();
    let plan = StepPlan::new(coeff, ensemble.grid);
    let names = variable_names(d, theta_columns);
    let m = basis.len(names.len());

    let mut y = vec![0.0; np * (n + 1)];
    let mut z = vec![0.0; np * n * k];
    let mut pathwise: Vec<f64> = (0..np)
        .into_par_iter()
        .map(|p| {
            let hist = History::new(&nodes, ensemble.states_of(p), d);
            (problem.terminal)(&hist)
        })
        .collect();
    for (p, v) in pathwise.iter().enumerate() {
        y[p * (n + 1) + n] = *v;
    }
    let mut condition_numbers = vec![0.0; n];
    let mut warnings = Vec::new();

    for i in (0..n).rev() {
        let vars: Vec<Vec<f64>> = (0..np).into_par_iter().map(|p| regression_variables(&plan, ensemble, p, i, theta_columns)).collect();
        // standardized so the ridge term does not depend on the scale of the state
        let (center, scale) = standardization(&vars);
        let features: Vec<f64> = vars
            .par_iter()
            .flat_map_iter(|v| {
                let z: Vec<f64> = v.iter().zip(&center).zip(&scale).map(|((x, c), s)| (x - c) / s).collect();
                let mut out = Vec::with_capacity(m);
                basis.expand(&z, &mut out);
                out
            })
            .collect();
        let mut targets = vec![(0..np).map(|p| y[p * (n + 1) + i + 1]).collect::<Vec<f64>>()];
        for l in 0..k {
            targets.push((0..np).map(|p| y[p * (n + 1) + i + 1] * ensemble.increment(p, i)[l] / dt).collect());
        }
        let fit = regress(&features, m, &targets, i)?;
        condition_numbers[i] = fit.condition;
        let expect = &fit.fitted[0];
        let zs: Vec<Vec<f64>> = (0..np).map(|p| (0..k).map(|l| fit.fitted[1 + l][p]).collect()).collect();

        let driver_at = |p: usize, yv: f64| {
            let hist = History::new(&nodes[..=i], &ensemble.states_of(p)[..(i + 1) * d], d);
            (problem.driver)(nodes[i], &hist, yv, &zs[p])
        };
        let mut current = expect.clone();
        let mut updates = Vec::with_capacity(2);
        for _ in 0..2 {
            let next: Vec<f64> = (0..np).into_par_iter().map(|p| expect[p] + driver_at(p, current[p]) * dt).collect();
            updates.push(next.iter().zip(&current).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
            current = next;
        }
        if updates[1] > updates[0] && updates[1] > 1e-14 * (1.0 + updates[0]) {
            warnings.push(format!("Picard update grew at step {i}: {:.3e} -> {:.3e}", updates[0], updates[1]));
        }
        for p in 0..np {
            y[p * (n + 1) + i] = current[p];
            z[(p * n + i) * k..(p * n + i + 1) * k].copy_from_slice(&zs[p]);
            pathwise[p] += driver_at(p, current[p]) * dt;
        }
    }
    let y0 = (0..np).map(|p| y[p * (n + 1)]).sum::<f64>() / np as f64;
    let se = MeanSe::of(&pathwise).se;
    Ok(BSDESolution {
        n_steps: n,
        path_count: np,
        dim_noise: k,
        y_values: y,
        z_values: z,
        basis_spec: basis.describe(&names),
        condition_numbers,
        warnings,
        y0,
        se,
    })
}

/// u(t,ω) = e^{−r(T−t)}·inner(t,ω), which turns a solution of the f = 0 PPDE into
/// one with driver f = −r·y.
pub struct Discounted<F> {
    pub inner: F,
    pub rate: f64,
    pub horizon: f64,
}

impl<F: Functional> Functional for Discounted<F> {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError> {
        Ok((-self.rate * (self.horizon - t)).exp() * self.inner.eval(t, path)?)
    }

    fn closed_derivatives(&self, t: f64, path: &Path) -> Option<Result<DerivativeBundle, FitoError>> {
        let inner = self.inner.closed_derivatives(t, path)?;
        Some(inner.and_then(|b| {
            let e = (-self.rate * (self.horizon - t)).exp();
            let u = self.inner.eval(t, path)?;
            Ok(DerivativeBundle {
                first_weights: b.first_weights.iter().map(|w| e * w).collect(),
                second_weights: b.second_weights.iter().map(|w| e * w).collect(),
                time_derivative: e * b.time_derivative + self.rate * e * u,
                kernel_second: e * b.kernel_second,
                running_at_t: e * b.running_at_t,
                ..b
            })
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeynmanKacReport {
    pub n_steps: usize,
    pub dt: f64,
    pub n_paths: usize,
    /// Per path: g(X) − Y_0 + Σ f Δt − Σ Z ΔW with Y_t = u(t, X⊗_tΘ^t).
    pub residual: MeanSe,
    pub t_stat: f64,
    pub rms: f64,
    /// max |∂_t u + ½⟨∂²u,(K^t,K^t)⟩ + f(t,ω,u,z)| over sampled (t, ω), with the
    /// kernel pairing supplied by u's own derivative bundle.
    pub ppde_max_abs: Option<f64>,
    pub ppde_points: usize,
}

/// Checks that Y_t = u(t, X⊗_tΘ^t), Z_t = ⟨∂_ω u, σ^{t,X}⟩ solve the BSDE along
/// the simulated paths, and evaluates the semilinear PPDE residual at sampled points
/// when `u` has closed-form derivatives.
pub fn feynman_kac_check(problem: &BSDEProblem, u: &dyn Functional, ensemble: &PathEnsemble) -> Result<FeynmanKacReport, BsdeError> {
    let coeff = problem.coeff.as_ref();
    if ensemble.dim_state != coeff.dim_state() || ensemble.dim_noise != coeff.dim_noise() {
        return Err(BsdeError::Config("ensemble and problem dimensions differ".into()));
    }
    let n = ensemble.grid.n_steps;
    let d = ensemble.dim_state;
    let k = ensemble.dim_noise;
    let dt = ensemble.grid.dt();
    let nodes = ensemble.grid.nodes();
    let plan = StepPlan::new(coeff, ensemble.grid);
    let cfg = FDConfig::for_grid(dt);
    let samples = [n / 4, n / 2, 3 * n / 4];

    let per_path: Vec<(f64, Vec<f64>)> = (0..ensemble.path_count)
        .into_par_iter()
        .map(|p| -> Result<(f64, Vec<f64>), BsdeError> {
            let field = theta_field_with_plan(&plan, ensemble, p)?;
            let states = ensemble.states_of(p);
            let full = History::new(&nodes, states, d);
            let mut total = (problem.terminal)(&full) - u.eval(0.0, &field.concat(0).path)?;
            let mut ppde = Vec::new();
            for i in 0..n {
                let t = nodes[i];
                let omega = field.concat(i).path;
                let hist = History::new(&nodes[..=i], &states[..(i + 1) * d], d);
                let (_, diff) = step_direction(&plan, &hist, i, d, k, n);
                let closed = u.closed_derivatives(t, &omega).transpose()?;
                let y = u.eval(t, &omega)?;
                let mut zs = vec![0.0; k];
                for (l, col) in diff.into_iter().enumerate() {
                    let eta = Path::new(nodes.clone(), col, d).expect("grid nodes");
                    zs[l] = match &closed {
                        Some(b) => b.first(&eta),
                        None => directional_derivative(u, t, &omega, &eta, &cfg)?,
                    };
                }
                let f = (problem.driver)(t, &hist, y, &zs);
                let dw = ensemble.increment(p, i);
                total += f * dt - zs.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>();
                if p < 8 && samples.contains(&i) {
                    if let Some(b) = &closed {
                        ppde.push(b.ppde_residual() + f);
                    }
                }
            }
            Ok((total, ppde))
        })
        .collect::<Result<_, _>>()?;
    let residuals: Vec<f64> = per_path.iter().map(|r| r.0).collect();
    let ppde: Vec<f64> = per_path.iter().flat_map(|r| r.1.iter().copied()).collect();
    let residual = MeanSe::of(&residuals);
    Ok(FeynmanKacReport {
        n_steps: n,
        dt,
        n_paths: ensemble.path_count,
        residual,
        t_stat: residual.t_stat(0.0),
        rms: (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt(),
        ppde_max_abs: (!ppde.is_empty()).then(|| ppde.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
        ppde_points: ppde.len(),
    })
}
