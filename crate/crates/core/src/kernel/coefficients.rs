use std::fmt;
use std::sync::Arc;

use super::KernelSpec;

/// The observed path up to and including the current source time s.
///
/// Coefficients receive only this prefix, which is how adaptedness is enforced.
#[derive(Clone, Copy, Debug)]
pub struct History<'a> {
    pub times: &'a [f64],
    pub states: &'a [f64],
    pub dim: usize,
}

impl<'a> History<'a> {
    pub fn new(times: &'a [f64], states: &'a [f64], dim: usize) -> Self {
        debug_assert_eq!(times.len() * dim, states.len());
        Self { times, states, dim }
    }

    pub fn time(&self) -> f64 {
        *self.times.last().expect("empty history")
    }

    pub fn current(&self) -> &'a [f64] {
        &self.states[self.states.len() - self.dim..]
    }

    pub fn state(&self, i: usize) -> &'a [f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Coefficients b(t;s,ω) (length d) and σ(t;s,ω) (row-major d×k) of a Volterra SDE.
///
/// `t` is the target time and the source time s is `hist.time()`; t > s always.
pub trait Coefficients: Send + Sync {
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;
    fn initial_state(&self) -> &[f64];
    /// Index of the diagonal blow-up (t−s)^{H−1/2}; below 1/2 means singular.
    fn hurst(&self) -> f64;
    fn drift(&self, t: f64, hist: &History<'_>, out: &mut [f64]);
    fn diffusion(&self, t: f64, hist: &History<'_>, out: &mut [f64]);

    /// Drift weight the scheme applies over the source cell [s, cell_end].
    /// Defaults to the left-point value.
    fn step_drift(&self, t: f64, _cell_end: f64, hist: &History<'_>, out: &mut [f64]) {
        self.drift(t, hist, out)
    }

    /// Diffusion weight the scheme applies to the increment over [s, cell_end].
    fn step_diffusion(&self, t: f64, _cell_end: f64, hist: &History<'_>, out: &mut [f64]) {
        self.diffusion(t, hist, out)
    }

    /// Fast path for kernel-times-state coefficients.
    fn as_separable(&self) -> Option<&SeparableCoefficients> {
        None
    }
}

/// s, state at s, output.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// How separable coefficients are discretized over a source cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// K evaluated at the left end of the cell.
    LeftPoint,
    /// Cell mean of K for the drift and root-mean-square of K for the noise, so
    /// that the discrete variance Σ w²Δt equals ∫K² exactly.
    #[default]
    CellAverage,
}

/// b_i(t;s,ω) = K_i(t,s)·β_i(s,ω_s) and σ_ij(t;s,ω) = K_i(t,s)·γ_ij(s,ω_s).
#[derive(Clone)]
pub struct SeparableCoefficients {
    pub x0: Vec<f64>,
    pub dim_noise: usize,
    pub kernels: Vec<KernelSpec>,
    pub drift: Option<StateFn>,
    pub diffusion: StateFn,
    pub scheme: WeightScheme,
}

impl fmt::Debug for SeparableCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableCoefficients")
            .field("x0", &self.x0)
            .field("dim_noise", &self.dim_noise)
            .field("kernels", &self.kernels)
            .field("scheme", &self.scheme)
            .finish()
    }
}

impl SeparableCoefficients {
    /// Driftless scalar Gaussian Volterra process X_t = x0 + ∫_0^t K(t,r)dW_r.
    pub fn gaussian(kernel: KernelSpec, x0: f64) -> Self {
        Self {
            x0: vec![x0],
            dim_noise: 1,
            kernels: vec![kernel],
            drift: None,
            diffusion: Arc::new(|_, _, out| out[0] = 1.0),
            scheme: WeightScheme::CellAverage,
        }
    }

    pub fn with_scheme(mut self, scheme: WeightScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Per-component kernel weights (drift, diffusion) for the cell [s, cell_end] and target t.
    pub fn weights(&self, i: usize, t: f64, s: f64, cell_end: f64) -> (f64, f64) {
        let k = &self.kernels[i];
        match self.scheme {
            WeightScheme::LeftPoint => {
                let v = k.raw(t, s);
                (v, v)
            }
            WeightScheme::CellAverage => k.cell_weights(t, s, cell_end),
        }
    }

    pub(crate) fn source_terms(&self, hist: &History<'_>) -> (Vec<f64>, Vec<f64>) {
        let d = self.x0.len();
        let s = hist.time();
        let x = hist.current();
        let mut beta = vec![0.0; d];
        if let Some(f) = &self.drift {
            f(s, x, &mut beta);
        }
        let mut gamma = vec![0.0; d * self.dim_noise];
        (self.diffusion)(s, x, &mut gamma);
        (beta, gamma)
    }
}

impl Coefficients for SeparableCoefficients {
    fn dim_state(&self) -> usize {
        self.x0.len()
    }

    fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    fn hurst(&self) -> f64 {
        self.kernels.iter().map(|k| k.hurst).fold(f64::INFINITY, f64::min)
    }

    fn drift(&self, t: f64, hist: &History<'_>, out: &mut [f64]) {
        let (beta, _) = self.source_terms(hist);
        let s = hist.time();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kernels[i].raw(t, s) * beta[i];
        }
    }

    fn diffusion(&self, t: f64, hist: &History<'_>, out: &mut [f64]) {
        let (_, gamma) = self.source_terms(hist);
        let s = hist.time();
        let k = self.dim_noise;
        for i in 0..self.x0.len() {
            let w = self.kernels[i].raw(t, s);
            for l in 0..k {
                out[i * k + l] = w * gamma[i * k + l];
            }
        }
    }

    fn step_drift(&self, t: f64, cell_end: f64, hist: &History<'_>, out: &mut [f64]) {
        let (beta, _) = self.source_terms(hist);
        let s = hist.time();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.weights(i, t, s, cell_end).0 * beta[i];
        }
    }

    fn step_diffusion(&self, t: f64, cell_end: f64, hist: &History<'_>, out: &mut [f64]) {
        let (_, gamma) = self.source_terms(hist);
        let s = hist.time();
        let k = self.dim_noise;
        for i in 0..self.x0.len() {
            let w = self.weights(i, t, s, cell_end).1;
            for l in 0..k {
                out[i * k + l] = w * gamma[i * k + l];
            }
        }
    }

    fn as_separable(&self) -> Option<&SeparableCoefficients> {
        Some(self)
    }
}
