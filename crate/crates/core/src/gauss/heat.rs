//! Crank-Nicolson solver for v_τ = ½ v_xx in variance time τ = σ̄²(T,t).
//!
//! u_g(T;t,x) = v(σ̄²(T,t), x), so this tabulation cross-checks the quadrature
//! route. Two implicit Euler half steps start the scheme (Rannacher) to damp the
//! payoff kink. Ends are held at g, exact while g is linear beyond the domain.

use super::{GaussError, Payoff};

#[derive(Clone, Debug, PartialEq)]
pub struct HeatTable {
    x_lo: f64,
    dx: f64,
    taus: Vec<f64>,
    /// values[k][i] = v(taus[k], x_lo + i·dx)
    values: Vec<Vec<f64>>,
}

fn thomas(lower: f64, diag: f64, upper: f64, rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    c[0] = upper / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - lower * c[i - 1];
        c[i] = upper / m;
        rhs[i] = (rhs[i] - lower * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

impl HeatTable {
    pub fn solve(g: &Payoff, x_range: (f64, f64), nx: usize, tau_max: f64, n_tau: usize) -> Result<Self, GaussError> {
        let (x_lo, x_hi) = x_range;
        if !(x_hi > x_lo) || nx < 4 || n_tau < 2 || !(tau_max > 0.0) {
            return Err(GaussError::Spec("heat grid needs x_hi > x_lo, nx ≥ 4, n_tau ≥ 2, tau_max > 0".into()));
        }
        let dx = (x_hi - x_lo) / nx as f64;
        let dtau = tau_max / n_tau as f64;
        let mut v: Vec<f64> = (0..=nx).map(|i| g.value(x_lo + i as f64 * dx)).collect();
        let (left, right) = (v[0], v[nx]);
        let mut taus = vec![0.0];
        let mut values = vec![v.clone()];
        let interior = nx - 1;

        let implicit = |v: &mut Vec<f64>, dt: f64| {
            let r = 0.5 * dt / (dx * dx);
            let mut rhs: Vec<f64> = v[1..nx].to_vec();
            rhs[0] += r * left;
            rhs[interior - 1] += r * right;
            thomas(-r, 1.0 + 2.0 * r, -r, &mut rhs);
            v[1..nx].copy_from_slice(&rhs);
        };
        let crank_nicolson = |v: &mut Vec<f64>, dt: f64| {
            let r = 0.25 * dt / (dx * dx);
            let mut rhs: Vec<f64> = (1..nx).map(|i| r * v[i - 1] + (1.0 - 2.0 * r) * v[i] + r * v[i + 1]).collect();
            rhs[0] += r * left;
            rhs[interior - 1] += r * right;
            thomas(-r, 1.0 + 2.0 * r, -r, &mut rhs);
            v[1..nx].copy_from_slice(&rhs);
        };

        for k in 1..=n_tau {
            if k == 1 {
                implicit(&mut v, 0.5 * dtau);
                implicit(&mut v, 0.5 * dtau);
            } else {
                crank_nicolson(&mut v, dtau);
            }
            taus.push(k as f64 * dtau);
            values.push(v.clone());
        }
        Ok(Self { x_lo, dx, taus, values })
    }

    pub fn tau_max(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    /// Bilinear interpolation; errors outside the tabulated domain.
    pub fn eval(&self, tau: f64, x: f64) -> Result<f64, GaussError> {
        let nx = self.values[0].len() - 1;
        let fx = (x - self.x_lo) / self.dx;
        if !(0.0..=nx as f64).contains(&fx) || !(0.0..=self.tau_max()).contains(&tau) {
            return Err(GaussError::Domain(format!("({tau}, {x}) outside the heat table")));
        }
        let i = (fx.floor() as usize).min(nx - 1);
        let wx = fx - i as f64;
        let k = self.taus.partition_point(|&s| s <= tau).clamp(1, self.taus.len() - 1) - 1;
        let wt = (tau - self.taus[k]) / (self.taus[k + 1] - self.taus[k]);
        let row = |k: usize| self.values[k][i] * (1.0 - wx) + self.values[k][i + 1] * wx;
        Ok(row(k) * (1.0 - wt) + row(k + 1) * wt)
    }
}
