//! The Gaussian linear case: X = x0 + ∫K(t,r)dW_r, ξ = g(X_T) + ∫_0^T f(s,X_s)ds.
//!
//! The conditional expectation is the deterministic functional
//! u(t,ω) = E[g(ω_T + σ̄(T,t)N) + ∫_t^T f(s, ω_s + σ̄(s,t)N)ds]
//! evaluated on the concatenated path. Expectations use Gauss-Hermite (or
//! kink-split Gauss-Legendre for non-smooth payoffs); time integrals use the
//! trapezoid rule on the path nodes.

mod heat;
mod payoff;

pub use heat::HeatTable;
pub use payoff::{CubicSpline, CustomPayoff, Payoff, Running};

use thiserror::Error;

use crate::fito::{FitoError, Functional};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::path::{Direction, Path};
use crate::quadrature::{
    adaptive_gl, gl_integrate, jacobi_right_singular, linear_cell_weights, normal_expectation, trapezoid_weights,
};
use crate::simulate::ConcatPath;
use crate::special::norm_pdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussError {
    #[error("gauss: {0}")]
    Spec(String),
    #[error("gauss domain: {0}")]
    Domain(String),
    #[error("growth guard: |{what}({x})| = {value} exceeds C(1+|x|^8)")]
    Growth { what: &'static str, x: f64, value: f64 },
}

impl From<GaussError> for FitoError {
    fn from(e: GaussError) -> Self {
        FitoError::Eval(e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct LinearProblem {
    pub terminal: Payoff,
    pub running: Running,
    pub kernel: KernelSpec,
    pub horizon: f64,
}

impl LinearProblem {
    pub fn new(terminal: Payoff, running: Running, kernel: KernelSpec, horizon: f64) -> Result<Self, GaussError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GaussError::Spec(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { terminal, running, kernel, horizon })
    }

    /// σ̄²(s,t) = ∫_t^s K(s,r)²dr, zero for s ≤ t.
    pub fn variance(&self, s: f64, t: f64) -> f64 {
        self.kernel.variance_unchecked(t, s)
    }
}

/// Path derivatives of u at (t, ω), as weights on the future path nodes.
///
/// `time_derivative` is ∂_t of u without the past integral ∫_0^t f, i.e. the
/// λ-average of the second derivatives against K² minus f(t,ω_t).
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub t: f64,
    pub nodes: Vec<f64>,
    pub first_weights: Vec<f64>,
    pub second_weights: Vec<f64>,
    pub time_derivative: f64,
    /// ⟨∂²u, (K^t, K^t)⟩ by product integration against the singular K(s,t)².
    pub kernel_second: f64,
    pub running_at_t: f64,
}

impl DerivativeBundle {
    pub fn first(&self, eta: &dyn Direction) -> f64 {
        let mut buf = [0.0];
        self.nodes
            .iter()
            .zip(&self.first_weights)
            .map(|(&s, &w)| {
                eta.at(s, &mut buf);
                w * buf[0]
            })
            .sum()
    }

    pub fn second(&self, eta1: &dyn Direction, eta2: &dyn Direction) -> f64 {
        let (mut a, mut b) = ([0.0], [0.0]);
        self.nodes
            .iter()
            .zip(&self.second_weights)
            .map(|(&s, &w)| {
                eta1.at(s, &mut a);
                eta2.at(s, &mut b);
                w * a[0] * b[0]
            })
            .sum()
    }

    /// ∂_t u + ½⟨∂²u,(K^t,K^t)⟩ + f(t,ω_t).
    pub fn ppde_residual(&self) -> f64 {
        self.time_derivative + 0.5 * self.kernel_second + self.running_at_t
    }
}

struct Split {
    past_t: Vec<f64>,
    past_v: Vec<f64>,
    fut_t: Vec<f64>,
    fut_v: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Order {
    Value,
    First,
    Second,
}

#[derive(Clone, Debug)]
pub struct GaussFunctional {
    pub problem: LinearProblem,
    /// C in the guard |g(x)|, |f(t,x)| ≤ C(1+|x|^8) on the quadrature range.
    pub growth_constant: f64,
    pub pde: Option<HeatTable>,
}

const GUARD_SPREAD: f64 = 12.0;

impl GaussFunctional {
    pub fn new(problem: LinearProblem) -> Self {
        Self { problem, growth_constant: 1e6, pde: None }
    }

    /// Tabulates u_g with the Crank-Nicolson solver for cross-checks.
    pub fn with_pde_grid(mut self, x_range: (f64, f64), nx: usize, n_tau: usize) -> Result<Self, GaussError> {
        let tau_max = self.problem.variance(self.problem.horizon, 0.0);
        self.pde = Some(HeatTable::solve(&self.problem.terminal, x_range, nx, tau_max, n_tau)?);
        Ok(self)
    }

    /// u_g(T;t,x) from the PDE table.
    pub fn eval_ug_pde(&self, t: f64, x: f64) -> Result<f64, GaussError> {
        let table = self.pde.as_ref().ok_or_else(|| GaussError::Spec("no PDE grid attached".into()))?;
        table.eval(self.problem.variance(self.problem.horizon, t), x)
    }

    /// u_g(T;t,x) = E[g(x + σ̄(T,t)N)].
    pub fn eval_ug(&self, t: f64, x: f64) -> Result<f64, GaussError> {
        let sd = self.problem.variance(self.problem.horizon, t).sqrt();
        self.g_expect(x, sd, Order::Value)
    }

    fn guard(&self, what: &'static str, x: f64, value: f64) -> Result<(), GaussError> {
        if !value.is_finite() || value.abs() > self.growth_constant * (1.0 + x.abs().powi(8)) {
            return Err(GaussError::Growth { what, x, value });
        }
        Ok(())
    }

    fn g_expect(&self, mean: f64, sd: f64, order: Order) -> Result<f64, GaussError> {
        let g = &self.problem.terminal;
        for x in [mean - GUARD_SPREAD * sd, mean, mean + GUARD_SPREAD * sd] {
            self.guard("g", x, g.value(x))?;
        }
        let kinks = g.kinks();
        let v = match order {
            Order::Value => normal_expectation(mean, sd, &kinks, &|x| g.value(x)),
            Order::First => normal_expectation(mean, sd, &kinks, &|x| g.d1(x)),
            Order::Second => {
                let mut v = normal_expectation(mean, sd, &kinks, &|x| g.d2(x));
                if sd > 0.0 {
                    for (k, w) in g.atoms() {
                        v += w * norm_pdf((k - mean) / sd) / sd;
                    }
                }
                v
            }
        };
        if !v.is_finite() {
            return Err(GaussError::Growth { what: "E[g]", x: mean, value: v });
        }
        Ok(v)
    }

    fn f_expect(&self, s: f64, mean: f64, sd: f64, order: Order) -> Result<f64, GaussError> {
        let f = &self.problem.running;
        if f.is_zero() {
            return Ok(0.0);
        }
        for x in [mean - GUARD_SPREAD * sd, mean, mean + GUARD_SPREAD * sd] {
            self.guard("f", x, (f.value)(s, x))?;
        }
        let h: &dyn Fn(f64) -> f64 = match order {
            Order::Value => &|x| (f.value)(s, x),
            Order::First => &|x| (f.d1)(s, x),
            Order::Second => &|x| (f.d2)(s, x),
        };
        Ok(normal_expectation(mean, sd, &[], h))
    }

    fn split(&self, t: f64, path: &Path) -> Result<Split, GaussError> {
        let horizon = self.problem.horizon;
        if path.dim() != 1 {
            return Err(GaussError::Domain(format!("paths must be scalar, got dimension {}", path.dim())));
        }
        if !(t >= 0.0 && t <= horizon) {
            return Err(GaussError::Domain(format!("t = {t} outside [0, {horizon}]")));
        }
        if (path.end() - horizon).abs() > 1e-12 * horizon.max(1.0) || path.start() > t {
            return Err(GaussError::Domain(format!(
                "path spans [{}, {}], need [0, {horizon}] around t = {t}",
                path.start(),
                path.end()
            )));
        }
        let times = path.times();
        let mut past_t = Vec::new();
        let mut past_v = Vec::new();
        for (j, &s) in times.iter().enumerate().take_while(|(_, &s)| s < t) {
            past_t.push(s);
            past_v.push(path.node(j)[0]);
        }
        if !past_t.is_empty() {
            past_t.push(t);
            past_v.push(path.left_limit(t)[0]);
        }
        let mut fut_t = vec![t];
        let mut fut_v = vec![path.scalar_at(t)];
        for (j, &s) in times.iter().enumerate().filter(|(_, &s)| s > t) {
            fut_t.push(s);
            fut_v.push(path.node(j)[0]);
        }
        Ok(Split { past_t, past_v, fut_t, fut_v })
    }

    fn past_integral(&self, sp: &Split) -> f64 {
        let f = &self.problem.running;
        if f.is_zero() || sp.past_t.len() < 2 {
            return 0.0;
        }
        trapezoid_weights(&sp.past_t)
            .iter()
            .zip(sp.past_t.iter().zip(&sp.past_v))
            .map(|(w, (&s, &x))| w * (f.value)(s, x))
            .sum()
    }

    fn future(&self, t: f64, sp: &Split) -> Result<f64, GaussError> {
        let p = &self.problem;
        let x_t = *sp.fut_v.last().unwrap();
        let mut v = self.g_expect(x_t, p.variance(p.horizon, t).sqrt(), Order::Value)?;
        if !p.running.is_zero() {
            for (w, (&s, &x)) in trapezoid_weights(&sp.fut_t).iter().zip(sp.fut_t.iter().zip(&sp.fut_v)) {
                if *w != 0.0 {
                    v += w * self.f_expect(s, x, p.variance(s, t).sqrt(), Order::Value)?;
                }
            }
        }
        Ok(v)
    }

    /// ∫_0^t f(s,ω_s)ds + u_g(T;t,ω_T) + ∫_t^T u_f(s;t,ω_s)ds.
    pub fn eval_u(&self, t: f64, path: &Path) -> Result<f64, GaussError> {
        let sp = self.split(t, path)?;
        Ok(self.past_integral(&sp) + self.future(t, &sp)?)
    }

    /// u without the past integral.
    pub fn eval_future(&self, t: f64, path: &Path) -> Result<f64, GaussError> {
        let sp = self.split(t, path)?;
        self.future(t, &sp)
    }

    pub fn eval_concat(&self, cp: &ConcatPath) -> Result<f64, GaussError> {
        self.eval_u(cp.split_time, &cp.path)
    }

    /// ∫_0^1 E[φ''(x + λσN)N²]dλ for φ = g (s = None) or f(s,·).
    fn lambda_average(&self, s: Option<f64>, mean: f64, sd: f64) -> Result<f64, GaussError> {
        if sd == 0.0 {
            return match s {
                None => self.g_expect(mean, 0.0, Order::Second),
                Some(s) => self.f_expect(s, mean, 0.0, Order::Second),
            };
        }
        let g = &self.problem.terminal;
        let f = &self.problem.running;
        let kinks = g.kinks();
        let regular = |lam: f64| -> f64 {
            let sl = lam * sd;
            if sl == 0.0 {
                return match s {
                    None => g.d2(mean),
                    Some(s) => (f.d2)(s, mean),
                };
            }
            let h = |y: f64| {
                let z = (y - mean) / sl;
                z * z * match s {
                    None => g.d2(y),
                    Some(s) => (f.d2)(s, y),
                }
            };
            normal_expectation(mean, sl, if s.is_none() { &kinks } else { &[] }, &h)
        };
        let mut v = if s.is_none() && !g.has_regular_second() { 0.0 } else { gl_integrate(20, 0.0, 1.0, regular) };
        if s.is_none() {
            // point masses of g'': with y = (k−x)/(λσ̄) the λ-integral of
            // φ(y)y²/(λσ̄) becomes ∫_{|k−x|/σ̄}^∞ yφ(y)dy/σ̄, which also covers x = k
            // where the integrand concentrates at λ = 0
            for (k, w) in g.atoms() {
                v += w * norm_pdf((k - mean) / sd) / sd;
            }
        }
        if !v.is_finite() {
            return Err(GaussError::Growth { what: "λ-average", x: mean, value: v });
        }
        Ok(v)
    }

    /// Closed-form derivatives at (t, ω).
    pub fn eval_derivatives(&self, t: f64, path: &Path) -> Result<DerivativeBundle, GaussError> {
        let p = &self.problem;
        if t >= p.horizon {
            return Err(GaussError::Domain(format!("derivatives need t < T, got t = {t}")));
        }
        let sp = self.split(t, path)?;
        let n = sp.fut_t.len();
        let trap = trapezoid_weights(&sp.fut_t);
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        let mut kernel_second = 0.0;
        let mut lambda_part = 0.0;
        let x_t = sp.fut_v[n - 1];
        let sd_t = p.variance(p.horizon, t).sqrt();
        let k_t = p.kernel.raw(p.horizon, t).powi(2);
        first[n - 1] += self.g_expect(x_t, sd_t, Order::First)?;
        let g2 = self.g_expect(x_t, sd_t, Order::Second)?;
        second[n - 1] += g2;
        kernel_second += k_t * g2;
        lambda_part += k_t * self.lambda_average(None, x_t, sd_t)?;
        if !p.running.is_zero() {
            let kw = squared_kernel_weights(&p.kernel, t, &sp.fut_t);
            for j in 0..n {
                let (s, x) = (sp.fut_t[j], sp.fut_v[j]);
                let sd = p.variance(s, t).sqrt();
                if trap[j] != 0.0 {
                    first[j] += trap[j] * self.f_expect(s, x, sd, Order::First)?;
                }
                if trap[j] != 0.0 || kw[j] != 0.0 {
                    let f2 = self.f_expect(s, x, sd, Order::Second)?;
                    second[j] += trap[j] * f2;
                    kernel_second += kw[j] * f2;
                    lambda_part += kw[j] * self.lambda_average(Some(s), x, sd)?;
                }
            }
        }
        let running_at_t = (p.running.value)(t, sp.fut_v[0]);
        Ok(DerivativeBundle {
            t,
            nodes: sp.fut_t,
            first_weights: first,
            second_weights: second,
            time_derivative: -0.5 * lambda_part - running_at_t,
            kernel_second,
            running_at_t,
        })
    }

    /// ∂_t u + ½⟨∂²u,(K^t,K^t)⟩ + f(t,ω_t) from the closed forms.
    pub fn ppde_residual(&self, t: f64, path: &Path) -> Result<f64, GaussError> {
        Ok(self.eval_derivatives(t, path)?.ppde_residual())
    }
}

/// ũ(t,x) = E[g(x + B^H_{T−t})] = ∫g(y)p^H(T−t, y−x)dy, which ignores the path.
pub fn eval_tilde_u(problem: &LinearProblem, t: f64, x: f64) -> Result<f64, GaussError> {
    if !problem.running.is_zero() {
        return Err(GaussError::Spec("ũ is defined for f = 0".into()));
    }
    if !(t >= 0.0 && t <= problem.horizon) {
        return Err(GaussError::Domain(format!("t = {t} outside [0, {}]", problem.horizon)));
    }
    let sd = (problem.horizon - t).powf(problem.kernel.hurst);
    let g = &problem.terminal;
    let v = normal_expectation(x, sd, &g.kinks(), &|y| g.value(y));
    if !v.is_finite() {
        return Err(GaussError::Growth { what: "E[g]", x, value: v });
    }
    Ok(v)
}

/// p^H(t,x) = e^{−x²/(2t^{2H})}/(√(2π)t^H).
pub fn density_ph(hurst: f64, t: f64, x: f64) -> f64 {
    let s = t.powf(hurst);
    norm_pdf(x / s) / s
}

/// Weights W_j with Σ W_j F(s_j) = ∫_t^{s_last} K(s,t)² F(s)ds for F linear on each cell.
pub fn squared_kernel_weights(kernel: &KernelSpec, t: f64, nodes: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    let c2 = kernel.normalization * kernel.normalization;
    let h = kernel.hurst;
    for j in 1..nodes.len() {
        let (a, b) = (nodes[j - 1], nodes[j]);
        if b <= a {
            continue;
        }
        let (lo, hi) = match &kernel.family {
            KernelFamily::RiemannLiouvilleNormalized => {
                let (l, r) = linear_cell_weights(2.0 * h, a - t, b - t);
                (2.0 * h * c2 * l, 2.0 * h * c2 * r)
            }
            KernelFamily::Constant => (0.5 * c2 * (b - a), 0.5 * c2 * (b - a)),
            KernelFamily::UserTabulated(_) => user_cell_weights(kernel, t, a, b),
        };
        w[j - 1] += lo;
        w[j] += hi;
    }
    w
}

fn user_cell_weights(kernel: &KernelSpec, t: f64, a: f64, b: f64) -> (f64, f64) {
    let len = b - a;
    let k2 = |s: f64| kernel.raw(s, t).powi(2);
    if a <= t && kernel.is_singular() {
        // left endpoint singularity (s−t)^{2H−1}: reflect onto the Jacobi rule
        let alpha = 2.0 * kernel.hurst - 1.0;
        let smooth = |s: f64| k2(s) / (s - t).powf(alpha);
        let lo = jacobi_right_singular(32, alpha, a, b, |r| {
            let s = a + b - r;
            smooth(s) * (b - s) / len
        });
        let hi = jacobi_right_singular(32, alpha, a, b, |r| {
            let s = a + b - r;
            smooth(s) * (s - a) / len
        });
        return (lo, hi);
    }
    let lo = adaptive_gl(a, b, 1e-12, &|s| k2(s) * (b - s) / len).0;
    let hi = adaptive_gl(a, b, 1e-12, &|s| k2(s) * (s - a) / len).0;
    (lo, hi)
}

/// The functional u(t,ω) including the past integral, so that u(t, X⊗Θ^t) is a martingale.
impl Functional for GaussFunctional {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError> {
        Ok(self.eval_u(t, path)?)
    }

    fn closed_derivatives(&self, t: f64, path: &Path) -> Option<Result<DerivativeBundle, FitoError>> {
        Some(
            self.eval_derivatives(t, path)
                .map(|mut b| {
                    b.time_derivative += b.running_at_t;
                    b
                })
                .map_err(FitoError::from),
        )
    }
}

/// The functional without the past integral; the PPDE is stated for this one.
pub struct FuturePart<'a>(pub &'a GaussFunctional);

impl Functional for FuturePart<'_> {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError> {
        Ok(self.0.eval_future(t, path)?)
    }

    fn closed_derivatives(&self, t: f64, path: &Path) -> Option<Result<DerivativeBundle, FitoError>> {
        Some(self.0.eval_derivatives(t, path).map_err(FitoError::from))
    }
}
