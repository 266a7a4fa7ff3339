//! Gauss-Legendre quadrature on `[0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KoopmanError, Result};

pub const DEFAULT_NODES: usize = 16;

/// Serializable description of a quadrature rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub kind: QuadratureKind,
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    GaussLegendre,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            kind: QuadratureKind::GaussLegendre,
            nodes: DEFAULT_NODES,
        }
    }
}

/// An `n`-node rule, exact for polynomials of degree `2n - 1`.
///
/// The last weight is set to `1 - (w_0 + ... + w_{n-2})` so the weights sum to
/// exactly one in sequential floating-point summation; integrating a constant
/// then reproduces it bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(KoopmanError::InvalidArgument(
                "quadrature needs at least one node".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        // Roots of P_n on [-1, 1] by Newton iteration from the Chebyshev-like guess.
        for i in 0..n {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, t);
                dp = d;
                let step = p / d;
                t -= step;
                if step.abs() <= 1e-16 * t.abs().max(1.0) {
                    dp = legendre(n, t).1;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - t * t) * dp * dp);
            // Map to [0, 1].
            nodes.push(0.5 * (1.0 - t));
            weights.push(0.5 * w);
        }
        // Roots were generated in descending t, so nodes ascend.
        let head: f64 = weights[..n - 1].iter().sum();
        weights[n - 1] = 1.0 - head;
        Ok(Self { nodes, weights })
    }

    pub fn from_spec(spec: &QuadratureSpec) -> Result<Self> {
        match spec.kind {
            QuadratureKind::GaussLegendre => Self::new(spec.nodes),
        }
    }

    pub fn spec(&self) -> QuadratureSpec {
        QuadratureSpec {
            kind: QuadratureKind::GaussLegendre,
            nodes: self.nodes.len(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(0.0, |acc, (&s, &w)| acc + w * f(s))
    }

    /// Integrates a matrix-valued function of the parameter elementwise.
    pub fn integrate_matrix<F>(&self, mut f: F) -> Result<DMatrix<f64>>
    where
        F: FnMut(f64) -> Result<DMatrix<f64>>,
    {
        let mut acc: Option<DMatrix<f64>> = None;
        for (&s, &w) in self.nodes.iter().zip(&self.weights) {
            let value = f(s)?;
            match acc.as_mut() {
                None => acc = Some(value * w),
                Some(a) => a.zip_apply(&value, |acc, v| *acc += v * w),
            }
        }
        Ok(acc.expect("at least one node"))
    }
}

impl Default for GaussLegendre {
    fn default() -> Self {
        Self::new(DEFAULT_NODES).expect("default node count is valid")
    }
}

/// `(P_n(t), P_n'(t))` by the three-term recurrence.
fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_rule() {
        let q = GaussLegendre::new(2).unwrap();
        let s = 0.5 / 3f64.sqrt();
        assert!((q.nodes()[0] - (0.5 - s)).abs() < 1e-15);
        assert!((q.nodes()[1] - (0.5 + s)).abs() < 1e-15);
        assert!(q.weights().iter().all(|w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn weights_sum_to_one_exactly() {
        for n in 1..=40 {
            let q = GaussLegendre::new(n).unwrap();
            assert_eq!(q.integrate(|_| 1.0), 1.0, "n = {n}");
            assert!(q.nodes().windows(2).all(|w| w[0] < w[1]));
            assert!(q.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn exact_up_to_degree_31() {
        let q = GaussLegendre::default();
        for d in 0..=31 {
            let approx = q.integrate(|s| s.powi(d));
            let exact = 1.0 / (d as f64 + 1.0);
            assert!((approx - exact).abs() <= 1e-13, "degree {d}: {approx} vs {exact}");
        }
    }

    #[test]
    fn not_exact_beyond_degree() {
        let q = GaussLegendre::new(2).unwrap();
        assert!((q.integrate(|s| s.powi(4)) - 0.2).abs() > 1e-4);
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(GaussLegendre::new(0).is_err());
    }
}
