//! Piecewise-linear paths on non-uniform nodes, with jumps.
//!
//! Two consecutive nodes at the same time encode a jump: the first holds the
//! left limit, the last the value. Evaluation is right-continuous. This is how
//! a perturbation ω + εη·1_{[t,T]} is represented without smearing it over the
//! cell that ends at t.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

/// A direction η evaluated pointwise; writes η(s) into `out` (length d).
pub trait Direction: Sync {
    fn at(&self, s: f64, out: &mut [f64]);
}

impl<F: Fn(f64, &mut [f64]) + Sync> Direction for F {
    fn at(&self, s: f64, out: &mut [f64]) {
        self(s, out)
    }
}

impl Direction for Path {
    fn at(&self, s: f64, out: &mut [f64]) {
        self.value_into(s, out)
    }
}

/// Scalar direction wrapper for one-dimensional paths.
pub struct Scalar<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> Direction for Scalar<F> {
    fn at(&self, s: f64, out: &mut [f64]) {
        out[0] = (self.0)(s);
    }
}

impl Path {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self, PathError> {
        if dim == 0 || times.is_empty() {
            return Err(PathError::Invalid("empty path".into()));
        }
        if values.len() != times.len() * dim {
            return Err(PathError::Invalid(format!(
                "{} values for {} nodes of dimension {dim}",
                values.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(PathError::Invalid("node times must be finite and non-decreasing".into()));
        }
        Ok(Self { times, values, dim })
    }

    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self, PathError> {
        Self::new(times, values, 1)
    }

    /// Constant path x on the given nodes.
    pub fn constant(times: Vec<f64>, x: &[f64]) -> Self {
        let values = times.iter().flat_map(|_| x.iter().copied()).collect();
        Self { times, values, dim: x.len() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn terminal(&self) -> &[f64] {
        self.node(self.len() - 1)
    }

    /// Index of the node carrying the right-continuous value at s, if s is a node.
    pub fn node_index(&self, s: f64) -> Option<usize> {
        let p = self.times.partition_point(|&t| t <= s);
        (p > 0 && self.times[p - 1] == s).then(|| p - 1)
    }

    /// Right-continuous linear interpolation at s (clamped to the end nodes).
    pub fn value_into(&self, s: f64, out: &mut [f64]) {
        let d = self.dim;
        let p = self.times.partition_point(|&t| t <= s);
        if p == 0 {
            out.copy_from_slice(self.node(0));
            return;
        }
        let j = p - 1;
        if self.times[j] == s || j + 1 == self.len() {
            out.copy_from_slice(self.node(j));
            return;
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let w = (s - t0) / (t1 - t0);
        for c in 0..d {
            let a = self.values[j * d + c];
            let b = self.values[(j + 1) * d + c];
            out[c] = a + w * (b - a);
        }
    }

    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_into(s, &mut out);
        out
    }

    pub fn scalar_at(&self, s: f64) -> f64 {
        let mut out = [0.0];
        self.value_into(s, &mut out);
        out[0]
    }

    /// Left limit at s.
    pub fn left_limit(&self, s: f64) -> Vec<f64> {
        let p = self.times.partition_point(|&t| t < s);
        if p == 0 {
            return self.node(0).to_vec();
        }
        if p < self.len() && self.times[p] == s {
            return self.node(p).to_vec();
        }
        self.value_at(s)
    }

    /// Copy with a node inserted at s (value by interpolation) unless one exists.
    pub fn with_node(&self, s: f64) -> Self {
        self.with_nodes(&[s])
    }

    /// Copy with nodes inserted at each s in `extra` not already present (within [start, end]).
    pub fn with_nodes(&self, extra: &[f64]) -> Self {
        let mut add: Vec<f64> = extra
            .iter()
            .copied()
            .filter(|&s| s >= self.start() && s <= self.end() && self.node_index(s).is_none())
            .collect();
        if add.is_empty() {
            return self.clone();
        }
        add.sort_by(|a, b| a.partial_cmp(b).unwrap());
        add.dedup();
        let d = self.dim;
        let mut times = Vec::with_capacity(self.len() + add.len());
        let mut values = Vec::with_capacity((self.len() + add.len()) * d);
        let mut buf = vec![0.0; d];
        let mut k = 0;
        for j in 0..self.len() {
            while k < add.len() && add[k] < self.times[j] {
                self.value_into(add[k], &mut buf);
                times.push(add[k]);
                values.extend_from_slice(&buf);
                k += 1;
            }
            times.push(self.times[j]);
            values.extend_from_slice(self.node(j));
        }
        Self { times, values, dim: d }
    }

    /// ω + ε·η·1_{[t,T]}: nodes from t on are shifted, and a jump node keeps the
    /// left limit at t so the segment before t is untouched.
    pub fn perturbed(&self, t: f64, eps: f64, eta: &dyn Direction) -> Self {
        let base = self.with_node(t);
        let d = base.dim;
        let first = base.times.partition_point(|&s| s < t);
        // `first` is the first node at time t; the last node at t carries the value
        let last_at_t = base.times.partition_point(|&s| s <= t) - 1;
        let mut times = Vec::with_capacity(base.len() + 1);
        let mut values = Vec::with_capacity((base.len() + 1) * d);
        times.extend_from_slice(&base.times[..first]);
        values.extend_from_slice(&base.values[..first * d]);
        if first > 0 && last_at_t == first {
            // left limit node at t (only needed when the path is defined before t)
            times.push(t);
            values.extend_from_slice(base.node(first));
        } else if last_at_t > first {
            times.extend_from_slice(&base.times[first..last_at_t]);
            values.extend_from_slice(&base.values[first * d..last_at_t * d]);
        }
        let mut buf = vec![0.0; d];
        for j in last_at_t..base.len() {
            eta.at(base.times[j], &mut buf);
            times.push(base.times[j]);
            for c in 0..d {
                values.push(base.values[j * d + c] + eps * buf[c]);
            }
        }
        Self { times, values, dim: d }
    }

    /// sup over nodes of the Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// sup over common nodes of |self − other|; both paths must share node times.
    pub fn sup_distance(&self, other: &Path) -> f64 {
        assert_eq!(self.times, other.times, "paths must share nodes");
        self.values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Path {
        Path::scalar(vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn interpolation_and_nodes() {
        let p = ramp();
        assert_eq!(p.scalar_at(0.25), 0.5);
        assert_eq!(p.scalar_at(1.5), 2.0);
        let q = p.with_node(0.75);
        assert_eq!(q.len(), 4);
        assert_eq!(q.scalar_at(0.75), 1.5);
        assert_eq!(q.node_index(0.75), Some(2));
    }

    #[test]
    fn perturbation_creates_jump_at_split() {
        let p = ramp();
        let q = p.perturbed(0.25, 0.1, &Scalar(|_| 1.0));
        assert_eq!(q.times(), &[0.0, 0.25, 0.25, 0.5, 1.0]);
        assert_eq!(q.left_limit(0.25), vec![0.5]);
        assert!((q.scalar_at(0.25) - 0.6).abs() < 1e-15);
        assert!((q.scalar_at(0.1) - 0.2).abs() < 1e-15);
        assert!((q.scalar_at(1.0) - 2.1).abs() < 1e-15);
        // perturbing at the first node shifts everything without a jump node
        let r = p.perturbed(0.0, 0.1, &Scalar(|_| 1.0));
        assert_eq!(r.len(), 3);
        assert!((r.scalar_at(0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn repeated_perturbation_reuses_jump() {
        let p = ramp();
        let q = p.perturbed(0.5, 0.1, &Scalar(|_| 1.0)).perturbed(0.5, 0.1, &Scalar(|_| 1.0));
        assert_eq!(q.times(), &[0.0, 0.5, 0.5, 1.0]);
        assert_eq!(q.left_limit(0.5), vec![1.0]);
        assert!((q.scalar_at(0.5) - 1.2).abs() < 1e-14);
    }

    #[test]
    fn rejects_decreasing_nodes() {
        assert!(Path::scalar(vec![0.0, 1.0, 0.5], vec![0.0; 3]).is_err());
    }
}
