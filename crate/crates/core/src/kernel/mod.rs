//! Volterra kernels K(t,s), the diagonal truncation φ^δ and kernel integrals.
//!
//! Kernels are only defined strictly above the diagonal. Gaps below
//! [`MIN_GAP`] are rejected instead of clamped.

mod coefficients;
mod table;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::quadrature::{adaptive_gl, jacobi_right_singular};

pub use coefficients::{Coefficients, History, SeparableCoefficients, StateFn, WeightScheme};
pub use table::GapTable;

/// Smallest admissible gap t - s for kernel evaluation.
pub const MIN_GAP: f64 = 1e-12;

/// Absolute tolerance of the adaptive kernel quadrature.
pub const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel domain error at t={t}, s={s}: {reason}")]
    Domain { t: f64, s: f64, reason: &'static str },
    #[error("invalid kernel spec: {0}")]
    Spec(String),
    #[error("kernel table: {0}")]
    Table(String),
}

/// A user kernel: either a tabulated convolution kernel or an arbitrary two-time function.
#[derive(Clone)]
pub enum UserKernel {
    Gap(GapTable),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for UserKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserKernel::Gap(t) => f.debug_tuple("Gap").field(&t.len()).finish(),
            UserKernel::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum KernelFamily {
    /// √(2H)(t−s)^{H−1/2}, so that ∫_0^t K(t,r)²dr = t^{2H}.
    RiemannLiouvilleNormalized,
    /// K ≡ 1 (Brownian motion when H = 1/2).
    Constant,
    UserTabulated(UserKernel),
}

/// A kernel with its Hurst-type index and a multiplicative normalization.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub hurst: f64,
    pub family: KernelFamily,
    pub normalization: f64,
}

/// Truncation φ^δ(t;s) = φ(t ∨ (s+δ); s) and the dyadic sequence δ_n = 2^{-n}.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationConfig {
    pub delta: f64,
    pub levels: std::ops::RangeInclusive<u32>,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { delta: 2f64.powi(-10), levels: 4..=10 }
    }
}

impl TruncationConfig {
    pub fn new(delta: f64) -> Result<Self, KernelError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(KernelError::Spec(format!("truncation delta must be positive, got {delta}")));
        }
        Ok(Self { delta, ..Self::default() })
    }

    pub fn dyadic_deltas(&self) -> Vec<f64> {
        self.levels.clone().map(|n| 2f64.powi(-(n as i32))).collect()
    }
}

/// A quadrature value with its error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

impl KernelSpec {
    pub fn new(hurst: f64, family: KernelFamily, normalization: f64) -> Result<Self, KernelError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(KernelError::Spec(format!("hurst must lie in (0,1), got {hurst}")));
        }
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(KernelError::Spec(format!("normalization must be positive, got {normalization}")));
        }
        Ok(Self { hurst, family, normalization })
    }

    pub fn riemann_liouville(hurst: f64) -> Result<Self, KernelError> {
        Self::new(hurst, KernelFamily::RiemannLiouvilleNormalized, 1.0)
    }

    pub fn constant() -> Self {
        Self { hurst: 0.5, family: KernelFamily::Constant, normalization: 1.0 }
    }

    pub fn tabulated(hurst: f64, table: GapTable) -> Result<Self, KernelError> {
        Self::new(hurst, KernelFamily::UserTabulated(UserKernel::Gap(table)), 1.0)
    }

    pub fn function(hurst: f64, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Result<Self, KernelError> {
        Self::new(hurst, KernelFamily::UserTabulated(UserKernel::Function(Arc::new(f))), 1.0)
    }

    pub fn with_normalization(mut self, c: f64) -> Result<Self, KernelError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(KernelError::Spec(format!("normalization must be positive, got {c}")));
        }
        self.normalization = c;
        Ok(self)
    }

    pub fn is_singular(&self) -> bool {
        self.hurst < 0.5
    }

    /// True when K(t,s) depends on t - s only.
    pub fn is_convolution(&self) -> bool {
        !matches!(self.family, KernelFamily::UserTabulated(UserKernel::Function(_)))
    }

    /// K(t,s) without domain checks; callers guarantee t > s.
    pub(crate) fn raw(&self, t: f64, s: f64) -> f64 {
        let c = self.normalization;
        match &self.family {
            KernelFamily::RiemannLiouvilleNormalized => {
                let h = self.hurst;
                c * (2.0 * h).sqrt() * (t - s).powf(h - 0.5)
            }
            KernelFamily::Constant => c,
            KernelFamily::UserTabulated(UserKernel::Gap(tab)) => c * tab.eval(t - s),
            KernelFamily::UserTabulated(UserKernel::Function(f)) => c * f(t, s),
        }
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<f64, KernelError> {
        check_pair(t, s)?;
        let v = self.raw(t, s);
        if !v.is_finite() {
            return Err(KernelError::Domain { t, s, reason: "non-finite kernel value" });
        }
        Ok(v)
    }

    pub fn eval_truncated(&self, cfg: &TruncationConfig, t: f64, s: f64) -> Result<f64, KernelError> {
        check_pair(t, s)?;
        if !(cfg.delta > 0.0) {
            return Err(KernelError::Spec("truncation delta must be positive".into()));
        }
        self.eval(t.max(s + cfg.delta), s)
    }

    /// σ̄²(s,t) = ∫_t^s K(s,r)² dr for t < s.
    pub fn cumulative_variance(&self, t: f64, s: f64) -> Result<Integral, KernelError> {
        if !(t.is_finite() && s.is_finite()) {
            return Err(KernelError::Domain { t, s, reason: "non-finite input" });
        }
        if t >= s {
            return Err(KernelError::Domain { t, s, reason: "cumulative variance needs t < s" });
        }
        let c2 = self.normalization * self.normalization;
        match &self.family {
            KernelFamily::RiemannLiouvilleNormalized => {
                Ok(Integral { value: c2 * (s - t).powf(2.0 * self.hurst), error: 0.0 })
            }
            KernelFamily::Constant => Ok(Integral { value: c2 * (s - t), error: 0.0 }),
            KernelFamily::UserTabulated(_) => Ok(self.kernel_power_integral(s, t, s, 2)),
        }
    }

    /// σ̄²(s,t) for callers that already validated t ≤ s; zero on the diagonal.
    pub(crate) fn variance_unchecked(&self, t: f64, s: f64) -> f64 {
        if s <= t {
            return 0.0;
        }
        match &self.family {
            KernelFamily::RiemannLiouvilleNormalized => {
                self.normalization * self.normalization * (s - t).powf(2.0 * self.hurst)
            }
            KernelFamily::Constant => self.normalization * self.normalization * (s - t),
            KernelFamily::UserTabulated(_) => self.kernel_power_integral(s, t, s, 2).value,
        }
    }

    /// ∫_lo^hi K(target, r)^p dr for lo < hi ≤ target, handling the diagonal singularity.
    pub(crate) fn kernel_power_integral(&self, target: f64, lo: f64, hi: f64, p: i32) -> Integral {
        let c = self.normalization;
        let h = self.hurst;
        match &self.family {
            KernelFamily::RiemannLiouvilleNormalized => {
                let (g_lo, g_hi) = (target - hi, target - lo);
                let e = p as f64 * (h - 0.5) + 1.0;
                let pref = (c * (2.0 * h).sqrt()).powi(p);
                Integral { value: pref * (g_hi.powf(e) - g_lo.powf(e)) / e, error: 0.0 }
            }
            KernelFamily::Constant => Integral { value: c.powi(p) * (hi - lo), error: 0.0 },
            KernelFamily::UserTabulated(_) => {
                let f = |r: f64| self.raw(target, r).powi(p);
                let touches = target - hi < MIN_GAP;
                if !(touches && self.is_singular()) {
                    let (v, e) = adaptive_gl(lo, hi, QUAD_TOL, &f);
                    return Integral { value: v, error: e };
                }
                singular_split(lo, target, p as f64 * (h - 0.5), &|r| self.raw(target, r).powi(p))
            }
        }
    }

    /// Scheme weights for the source cell [lo, hi] acting on `target` ≥ hi:
    /// (cell mean of K, root-mean-square of K).
    pub fn cell_weights(&self, target: f64, lo: f64, hi: f64) -> (f64, f64) {
        let len = hi - lo;
        let mean = self.kernel_power_integral(target, lo, hi, 1).value / len;
        let ms = self.kernel_power_integral(target, lo, hi, 2).value / len;
        (mean, ms.sqrt())
    }
}

/// ∫_a^b f(r) dr where f(r) ~ (b−r)^alpha near b; geometric splitting with a
/// Gauss-Jacobi rule on the innermost panel.
fn singular_split(a: f64, b: f64, alpha: f64, f: &dyn Fn(f64) -> f64) -> Integral {
    let smooth = |r: f64| f(r) / (b - r).powf(alpha);
    let mut value = 0.0;
    let mut error = 0.0;
    let mut lo = a;
    for _ in 0..60 {
        let width = b - lo;
        let j16 = jacobi_right_singular(16, alpha, lo, b, smooth);
        let j32 = jacobi_right_singular(32, alpha, lo, b, smooth);
        if (j32 - j16).abs() <= 0.5 * QUAD_TOL || width < 1e3 * MIN_GAP {
            value += j32;
            error += (j32 - j16).abs();
            return Integral { value, error };
        }
        let mid = lo + 0.5 * width;
        let (v, e) = adaptive_gl(lo, mid, 0.25 * QUAD_TOL, f);
        value += v;
        error += e;
        lo = mid;
    }
    Integral { value, error }
}

fn check_pair(t: f64, s: f64) -> Result<(), KernelError> {
    if !(t.is_finite() && s.is_finite()) {
        return Err(KernelError::Domain { t, s, reason: "non-finite input" });
    }
    if s >= t {
        return Err(KernelError::Domain { t, s, reason: "kernel needs s < t" });
    }
    if t - s < MIN_GAP {
        return Err(KernelError::Domain { t, s, reason: "gap below 1e-12" });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rl_half_is_one() {
        let k = KernelSpec::riemann_liouville(0.5).unwrap();
        assert_relative_eq!(k.eval(0.7, 0.2).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(KernelSpec::constant().eval(3.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn rl_singular_value() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        let expect = 0.6f64.sqrt() * 0.01f64.powf(-0.2);
        assert_relative_eq!(k.eval(0.51, 0.5).unwrap(), expect, max_relative = 1e-12);
        assert_relative_eq!(expect, 1.9456, max_relative = 1e-4);
        assert!(k.is_singular());
    }

    #[test]
    fn domain_errors() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        assert!(k.eval(0.5, 0.5).is_err());
        assert!(k.eval(0.4, 0.5).is_err());
        assert!(k.eval(f64::NAN, 0.0).is_err());
        assert!(k.eval(0.5 + 1e-13, 0.5).is_err());
        assert!(k.cumulative_variance(0.5, 0.5).is_err());
        assert!(KernelSpec::riemann_liouville(1.0).is_err());
    }

    #[test]
    fn truncation_examples() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        let cfg = TruncationConfig::new(0.1).unwrap();
        let near = k.eval_truncated(&cfg, 0.25, 0.2).unwrap();
        assert_relative_eq!(near, 0.6f64.sqrt() * 0.1f64.powf(-0.2), max_relative = 1e-12);
        let far = k.eval_truncated(&cfg, 0.7, 0.2).unwrap();
        assert_eq!(far, k.eval(0.7, 0.2).unwrap());
        assert_eq!(KernelSpec::constant().eval_truncated(&cfg, 0.21, 0.2).unwrap(), 1.0);
    }

    #[test]
    fn cumulative_variance_examples() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        assert_relative_eq!(k.cumulative_variance(0.0, 1.0).unwrap().value, 1.0, epsilon = 1e-15);
        let b = KernelSpec::riemann_liouville(0.5).unwrap();
        assert_relative_eq!(b.cumulative_variance(0.5, 0.75).unwrap().value, 0.25, epsilon = 1e-15);
        let user = KernelSpec::function(0.5, |s, r| s * r).unwrap();
        let v = user.cumulative_variance(0.0, 1.0).unwrap();
        assert_relative_eq!(v.value, 1.0 / 3.0, epsilon = 1e-12);
        assert!(v.error < 1e-10);
    }

    #[test]
    fn quadrature_agrees_with_closed_form_for_singular_user_kernel() {
        for &h in &[0.1, 0.3, 0.45] {
            let hh = h;
            let user = KernelSpec::function(h, move |t, s| (2.0 * hh).sqrt() * (t - s).powf(hh - 0.5)).unwrap();
            for &t in &[0.1, 0.5, 1.0, 2.0] {
                let q = user.cumulative_variance(0.0, t).unwrap();
                let exact = t.powf(2.0 * h);
                assert!((q.value - exact).abs() < 1e-9, "h={h} t={t} q={} exact={exact}", q.value);
            }
        }
    }

    #[test]
    fn rl_closed_form_within_ten_eps() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        for i in 1..=50 {
            let t = i as f64 * 0.04;
            let v = k.cumulative_variance(0.0, t).unwrap().value;
            let exact = t.powf(0.6);
            assert!((v - exact).abs() <= 10.0 * f64::EPSILON * exact);
        }
    }

    #[test]
    fn cell_weights_preserve_cell_variance() {
        let k = KernelSpec::riemann_liouville(0.3).unwrap();
        let h = 1.0 / 64.0;
        let mut total = 0.0;
        for r in 0..64 {
            let (_, rms) = k.cell_weights(1.0, r as f64 * h, (r + 1) as f64 * h);
            total += rms * rms * h;
        }
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn half_rl_equals_constant(t in 0.001f64..5.0, frac in 0.0f64..0.999) {
            let s = t * frac;
            let a = KernelSpec::riemann_liouville(0.5).unwrap().eval(t, s).unwrap();
            let b = KernelSpec::constant().eval(t, s).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
        }

        #[test]
        fn truncation_monotone_and_convergent(h in 0.05f64..0.49, gap in 1e-3f64..1.0, d1 in 1e-4f64..1.0, d2 in 1e-4f64..1.0) {
            let k = KernelSpec::riemann_liouville(h).unwrap();
            let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let s = 0.2;
            let t = s + gap;
            let a = k.eval_truncated(&TruncationConfig::new(small).unwrap(), t, s).unwrap();
            let b = k.eval_truncated(&TruncationConfig::new(large).unwrap(), t, s).unwrap();
            // singular RL kernels decrease in the gap, so a larger delta can only lower the value
            prop_assert!(b <= a + 1e-14);
            let tiny = k.eval_truncated(&TruncationConfig::new(gap * 1e-3).unwrap(), t, s).unwrap();
            prop_assert_eq!(tiny, k.eval(t, s).unwrap());
        }

        #[test]
        fn rl_cumulative_variance_is_power(h in 0.05f64..0.95, len in 1e-6f64..2.0) {
            let k = KernelSpec::riemann_liouville(h).unwrap();
            let v = k.cumulative_variance(0.0, len).unwrap().value;
            let exact = len.powf(2.0 * h);
            prop_assert!((v - exact).abs() <= 10.0 * f64::EPSILON * exact);
        }
    }
}
