//! Quadrature rules shared by the kernel, Gaussian and transform code.
//!
//! Node tables come from `gauss-quad` (Golub-Welsch) and are cached.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Mutex, OnceLock};

use gauss_quad::{GaussHermite, GaussJacobi, GaussLegendre};

/// Node count of the Gauss-Hermite rule used for Gaussian expectations.
pub const HERMITE_NODES: usize = 64;

/// Integration half-width (in standard deviations) for kink-aware expectations.
const Z_RANGE: f64 = 12.0;

/// Nodes and weights for E[h(N)], N standard normal.
pub fn standard_normal_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let gh = GaussHermite::new(NonZeroUsize::new(HERMITE_NODES).unwrap());
        let s = std::f64::consts::PI.sqrt();
        let mut rule: Vec<(f64, f64)> = gh
            .nodes()
            .zip(gh.weights())
            .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / s))
            .collect();
        rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        rule
    })
}

/// Gauss-Legendre nodes/weights on [-1, 1], cached per degree.
pub fn legendre(n: usize) -> &'static [(f64, f64)] {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static [(f64, f64)]>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    *map.entry(n)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(NonZeroUsize::new(n).unwrap());
            let mut v: Vec<(f64, f64)> = gl.nodes().zip(gl.weights()).map(|(x, w)| (*x, *w)).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            Box::leak(v.into_boxed_slice())
        })
}

/// Integral of `f` over [a, b] with an n-point Gauss-Legendre rule.
pub fn gl_integrate(n: usize, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    legendre(n).iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Integral of (b - r)^alpha * f(r) over [a, b] by Gauss-Jacobi, for alpha > -1.
pub fn jacobi_right_singular(n: usize, alpha: f64, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let gj = GaussJacobi::new(
        NonZeroUsize::new(n).unwrap(),
        alpha.try_into().expect("jacobi exponent must exceed -1"),
        0.0.try_into().unwrap(),
    );
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let sum: f64 = gj.nodes().zip(gj.weights()).map(|(x, w)| w * f(mid + half * x)).sum();
    sum * half * half.powf(alpha)
}

/// Adaptive Gauss-Legendre (15 vs 30 nodes) with bisection; returns (value, error estimate).
pub fn adaptive_gl(a: f64, b: f64, tol: f64, f: &dyn Fn(f64) -> f64) -> (f64, f64) {
    // tolerances are not split below round-off of the whole integral, or
    // bisection would chase floating-point noise
    fn rec(a: f64, b: f64, tol: f64, floor: f64, f: &dyn Fn(f64) -> f64, depth: u32) -> (f64, f64) {
        let coarse = gl_integrate(15, a, b, f);
        let fine = gl_integrate(30, a, b, f);
        let err = (fine - coarse).abs();
        if err <= tol || depth >= 40 {
            return (fine, err);
        }
        let m = 0.5 * (a + b);
        let sub = (0.5 * tol).max(floor);
        let (l, el) = rec(a, m, sub, floor, f, depth + 1);
        let (r, er) = rec(m, b, sub, floor, f, depth + 1);
        (l + r, el + er)
    }
    let floor = 16.0 * f64::EPSILON * gl_integrate(30, a, b, f).abs();
    rec(a, b, tol.max(floor), floor, f, 0)
}

/// E[h(mean + sd*N)] for N standard normal.
///
/// Smooth integrands use the 64-node Gauss-Hermite rule. When `kinks` lists
/// points where h or its low derivatives jump, the real line is split there and
/// each smooth piece is integrated with composite Gauss-Legendre against the
/// normal density, which keeps call-type payoffs at near machine accuracy.
pub fn normal_expectation(mean: f64, sd: f64, kinks: &[f64], h: &dyn Fn(f64) -> f64) -> f64 {
    if sd == 0.0 {
        return h(mean);
    }
    let zs: Vec<f64> = kinks
        .iter()
        .map(|k| (k - mean) / sd)
        .filter(|z| z.abs() < Z_RANGE)
        .collect();
    if zs.is_empty() {
        return standard_normal_rule()
            .iter()
            .map(|&(z, w)| w * h(mean + sd * z))
            .sum();
    }
    let mut cuts = Vec::with_capacity(zs.len() + 2);
    cuts.push(-Z_RANGE);
    let mut sorted = zs;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.extend(sorted);
    cuts.push(Z_RANGE);
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi <= lo {
            continue;
        }
        let panels = ((hi - lo) / 0.75).ceil().max(1.0) as usize;
        let width = (hi - lo) / panels as f64;
        for p in 0..panels {
            let a = lo + p as f64 * width;
            total += gl_integrate(24, a, a + width, |z| h(mean + sd * z) * (-0.5 * z * z).exp() * norm);
        }
    }
    total
}

/// Weights (w_lo, w_hi) with ∫_{u_lo}^{u_hi} u^(beta-1) L(u) du = w_lo L(u_lo) + w_hi L(u_hi)
/// for every linear L; beta > 0 and 0 <= u_lo < u_hi.
pub fn linear_cell_weights(beta: f64, u_lo: f64, u_hi: f64) -> (f64, f64) {
    let h = u_hi - u_lo;
    if u_lo > 0.0 && h < 0.25 * u_lo {
        // analytic integrand on the cell: a short Gauss rule avoids cancellation
        let mut wl = 0.0;
        let mut wh = 0.0;
        let half = 0.5 * h;
        let mid = u_lo + half;
        for &(x, w) in legendre(8) {
            let u = mid + half * x;
            let k = w * half * u.powf(beta - 1.0);
            wl += k * (u_hi - u) / h;
            wh += k * (u - u_lo) / h;
        }
        return (wl, wh);
    }
    let m0 = (u_hi.powf(beta) - u_lo.powf(beta)) / beta;
    let m1 = (u_hi.powf(beta + 1.0) - u_lo.powf(beta + 1.0)) / (beta + 1.0);
    ((u_hi * m0 - m1) / h, (m1 - u_lo * m0) / h)
}

/// Trapezoid weights on a non-decreasing node list (zero-width cells contribute nothing).
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; nodes.len()];
    for j in 1..nodes.len() {
        let h = nodes[j] - nodes[j - 1];
        w[j - 1] += 0.5 * h;
        w[j] += 0.5 * h;
    }
    w
}
