//! Small reference functionals with known derivatives.

use std::sync::Arc;

use super::{FitoError, Functional};
use crate::path::Path;
use crate::quadrature::{linear_cell_weights, trapezoid_weights};

/// (s, ω_s) for the nodes from t on, starting with the right-continuous value at t.
fn future_nodes(t: f64, path: &Path) -> Result<(Vec<f64>, Vec<f64>), FitoError> {
    if t < path.start() || t > path.end() {
        return Err(FitoError::Domain(format!("t = {t} outside the path [{}, {}]", path.start(), path.end())));
    }
    let mut times = vec![t];
    let mut values = vec![path.value_at(t)[0]];
    for (j, &s) in path.times().iter().enumerate() {
        if s > t {
            times.push(s);
            values.push(path.node(j)[0]);
        }
    }
    Ok((times, values))
}

/// u(t,ω) = c.
pub struct ConstantFunctional(pub f64);

impl Functional for ConstantFunctional {
    fn eval(&self, _t: f64, _path: &Path) -> Result<f64, FitoError> {
        Ok(self.0)
    }
}

/// u(t,ω) = ω_T (first component); along X⊗Θ^t this is Θ^t_T.
pub struct TerminalValue;

impl Functional for TerminalValue {
    fn eval(&self, _t: f64, path: &Path) -> Result<f64, FitoError> {
        Ok(path.terminal()[0])
    }
}

/// u(t,ω) = ω_T².
pub struct TerminalSquare;

impl Functional for TerminalSquare {
    fn eval(&self, _t: f64, path: &Path) -> Result<f64, FitoError> {
        Ok(path.terminal()[0].powi(2))
    }
}

/// u(t,ω) = ∫_t^T ω_s ds by the trapezoid rule on the path nodes.
pub struct PathIntegral;

impl Functional for PathIntegral {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError> {
        let (times, values) = future_nodes(t, path)?;
        Ok(trapezoid_weights(&times).iter().zip(&values).map(|(w, v)| w * v).sum())
    }
}

/// u(t,ω) = ∫_t^T (s−t)^{−1/2} h(ω_s) ds, product-integrated against the
/// singular weight with h(ω) linear between nodes.
///
/// Its derivative ⟨∂u,η⟩ = ∫(s−t)^{−1/2}h'(ω_s)η_s ds vanishes diagonally with
/// rate exactly 1/2, so pairings with a kernel of index H converge at rate H.
#[derive(Clone)]
pub struct SingularWeightIntegral {
    pub h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl SingularWeightIntegral {
    pub fn new(h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { h: Arc::new(h) }
    }
}

impl Functional for SingularWeightIntegral {
    fn eval(&self, t: f64, path: &Path) -> Result<f64, FitoError> {
        let (times, values) = future_nodes(t, path)?;
        let mut total = 0.0;
        for j in 1..times.len() {
            let (a, b) = (times[j - 1], times[j]);
            if b > a {
                let (wl, wh) = linear_cell_weights(0.5, a - t, b - t);
                total += wl * (self.h)(values[j - 1]) + wh * (self.h)(values[j]);
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn singular_weight_integral_of_constant() {
        let u = SingularWeightIntegral::new(|x| x);
        let p = Path::constant(vec![0.0, 0.3, 1.0], &[2.0]);
        // 2·∫_t^1 (s−t)^{−1/2} ds = 4√(1−t)
        assert_relative_eq!(u.eval(0.19, &p).unwrap(), 4.0 * 0.81f64.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn path_integral_uses_right_value_at_t() {
        let p = Path::scalar(vec![0.0, 0.5, 0.5, 1.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(PathIntegral.eval(0.5, &p).unwrap(), 0.5);
        assert_eq!(TerminalSquare.eval(0.2, &p).unwrap(), 1.0);
    }
}
