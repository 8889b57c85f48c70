//! Terminal payoffs g and running costs f(t, x) with their first two derivatives.

use std::fmt;
use std::io::Read;
use std::sync::Arc;

use super::GaussError;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type TimeScalar = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Natural cubic spline through tabulated (x, g) points, extended linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, GaussError> {
        if points.len() < 3 {
            return Err(GaussError::Spec("a tabulated payoff needs at least 3 points".into()));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(GaussError::Spec("tabulated payoff has non-finite entries".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(GaussError::Spec("tabulated payoff abscissae must increase".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| p.0).collect();
        let y: Vec<f64> = points.iter().map(|p| p.1).collect();
        let n = x.len();
        // tridiagonal system for the interior second derivatives (natural ends)
        let mut m = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            diag[i] = 2.0 * (h0 + h1);
            upper[i] = h1;
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            if i > 1 {
                let w = h0 / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
        }
        for i in (1..n - 1).rev() {
            m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
        }
        Ok(Self { x, y, m })
    }

    /// Two columns (x, g), optional header line.
    pub fn from_csv(reader: impl Read) -> Result<Self, GaussError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| GaussError::Spec(format!("payoff csv: {e}")))?;
            let parsed: Result<Vec<f64>, _> = rec.iter().take(2).map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) if v.len() == 2 => points.push((v[0], v[1])),
                _ if line == 0 => continue,
                _ => return Err(GaussError::Spec(format!("payoff csv: bad row {}", line + 1))),
            }
        }
        Self::new(&points)
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.x.len();
        self.x.partition_point(|&k| k <= x).clamp(1, n - 1) - 1
    }

    /// (value, first, second derivative).
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        let end_slope = |i: usize, at_left: bool| {
            let h = self.x[i + 1] - self.x[i];
            let s = (self.y[i + 1] - self.y[i]) / h;
            if at_left {
                s - h * (2.0 * self.m[i] + self.m[i + 1]) / 6.0
            } else {
                s + h * (self.m[i] + 2.0 * self.m[i + 1]) / 6.0
            }
        };
        if x < self.x[0] {
            let d = end_slope(0, true);
            return (self.y[0] + d * (x - self.x[0]), d, 0.0);
        }
        if x > self.x[n - 1] {
            let d = end_slope(n - 2, false);
            return (self.y[n - 1] + d * (x - self.x[n - 1]), d, 0.0);
        }
        let i = self.locate(x);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - x) / h;
        let b = (x - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h + ((3.0 * b * b - 1.0) * m1 - (3.0 * a * a - 1.0) * m0) * h / 6.0;
        (v, d, a * m0 + b * m1)
    }
}

/// A user-supplied twice differentiable payoff.
#[derive(Clone)]
pub struct CustomPayoff {
    pub value: Scalar,
    pub d1: Scalar,
    pub d2: Scalar,
    pub kinks: Vec<f64>,
}

impl fmt::Debug for CustomPayoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPayoff").field("kinks", &self.kinks).finish()
    }
}

/// Terminal payoff g. Second derivatives of kinked payoffs carry point masses,
/// reported by [`Payoff::atoms`].
#[derive(Clone, Debug)]
pub enum Payoff {
    Identity,
    Call { strike: f64 },
    Put { strike: f64 },
    /// x^exponent
    Power { exponent: u32 },
    Tabulated(CubicSpline),
    Custom(CustomPayoff),
}

impl Payoff {
    pub fn custom(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Payoff::Custom(CustomPayoff { value: Arc::new(value), d1: Arc::new(d1), d2: Arc::new(d2), kinks: Vec::new() })
    }

    /// Builds a named payoff; `strike` is used by call/put, `exponent` by power.
    pub fn from_name(name: &str, strike: Option<f64>, exponent: Option<u32>) -> Result<Self, GaussError> {
        let need_strike = || strike.ok_or_else(|| GaussError::Spec(format!("payoff '{name}' needs a strike")));
        match name {
            "identity" => Ok(Payoff::Identity),
            "call" => Ok(Payoff::Call { strike: need_strike()? }),
            "put" => Ok(Payoff::Put { strike: need_strike()? }),
            "power" => Ok(Payoff::Power {
                exponent: exponent.ok_or_else(|| GaussError::Spec("payoff 'power' needs an exponent".into()))?,
            }),
            other => Err(GaussError::Spec(format!("unknown payoff '{other}'"))),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Payoff::Identity => x,
            Payoff::Call { strike } => (x - strike).max(0.0),
            Payoff::Put { strike } => (strike - x).max(0.0),
            Payoff::Power { exponent } => x.powi(*exponent as i32),
            Payoff::Tabulated(s) => s.eval(x).0,
            Payoff::Custom(c) => (c.value)(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Payoff::Identity => 1.0,
            Payoff::Call { strike } => f64::from(u8::from(x > *strike)),
            Payoff::Put { strike } => -f64::from(u8::from(x < *strike)),
            Payoff::Power { exponent: 0 } => 0.0,
            Payoff::Power { exponent } => *exponent as f64 * x.powi(*exponent as i32 - 1),
            Payoff::Tabulated(s) => s.eval(x).1,
            Payoff::Custom(c) => (c.d1)(x),
        }
    }

    /// Absolutely continuous part of g''.
    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Payoff::Identity | Payoff::Call { .. } | Payoff::Put { .. } => 0.0,
            Payoff::Power { exponent } if *exponent < 2 => 0.0,
            Payoff::Power { exponent } => {
                let p = *exponent as f64;
                p * (p - 1.0) * x.powi(*exponent as i32 - 2)
            }
            Payoff::Tabulated(s) => s.eval(x).2,
            Payoff::Custom(c) => (c.d2)(x),
        }
    }

    /// False when the absolutely continuous part of g'' vanishes identically.
    pub fn has_regular_second(&self) -> bool {
        !matches!(self, Payoff::Identity | Payoff::Call { .. } | Payoff::Put { .. } | Payoff::Power { exponent: 0 | 1 })
    }

    /// Points where g or g' is not smooth; used to split quadrature.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => vec![*strike],
            Payoff::Tabulated(s) => s.knots().to_vec(),
            Payoff::Custom(c) => c.kinks.clone(),
            _ => Vec::new(),
        }
    }

    /// Point masses (location, weight) of g''.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => vec![(*strike, 1.0)],
            _ => Vec::new(),
        }
    }
}

/// Running cost f(t, x) with x-derivatives.
#[derive(Clone)]
pub struct Running {
    pub value: TimeScalar,
    pub d1: TimeScalar,
    pub d2: TimeScalar,
    zero: bool,
}

impl fmt::Debug for Running {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Running").field("zero", &self.zero).finish()
    }
}

impl Running {
    pub fn zero() -> Self {
        Self { value: Arc::new(|_, _| 0.0), d1: Arc::new(|_, _| 0.0), d2: Arc::new(|_, _| 0.0), zero: true }
    }

    /// f(t, x) = x².
    pub fn square() -> Self {
        Self { value: Arc::new(|_, x| x * x), d1: Arc::new(|_, x| 2.0 * x), d2: Arc::new(|_, _| 2.0), zero: false }
    }

    pub fn custom(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), d1: Arc::new(d1), d2: Arc::new(d2), zero: false }
    }

    pub fn from_name(name: &str) -> Result<Self, GaussError> {
        match name {
            "zero" => Ok(Self::zero()),
            "square" => Ok(Self::square()),
            other => Err(GaussError::Spec(format!("unknown running cost '{other}'"))),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}
