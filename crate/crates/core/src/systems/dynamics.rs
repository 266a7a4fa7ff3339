use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::poly::PolynomialMap;
use crate::error::{check_dim, KoopmanError, Result};
use crate::linalg::fd_jacobian;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

impl fmt::Display for TimeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeDomain::Continuous => write!(f, "continuous"),
            TimeDomain::Discrete => write!(f, "discrete"),
        }
    }
}

pub type VectorFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Black-box dynamics `f_d(x, u)`: the right-hand side in continuous time,
/// the successor map in discrete time.
#[derive(Clone)]
pub struct DynamicsOracle {
    n_x: usize,
    n_u: usize,
    time_domain: TimeDomain,
    eval: VectorFn,
    input_jacobian: Option<MatrixFn>,
}

impl fmt::Debug for DynamicsOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsOracle")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("time_domain", &self.time_domain)
            .field("analytic_input_jacobian", &self.input_jacobian.is_some())
            .finish()
    }
}

impl DynamicsOracle {
    pub fn new<F>(n_x: usize, n_u: usize, time_domain: TimeDomain, eval: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            n_x,
            n_u,
            time_domain,
            eval: Arc::new(eval),
            input_jacobian: None,
        }
    }

    /// Attaches an analytic `df_d/du`, an `n_x x n_u` matrix.
    pub fn with_input_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.input_jacobian = Some(Arc::new(jac));
        self
    }

    /// `f_d(x, u) = f(x) + sum_i g_i(x) u_i` with polynomial `f` and columns `g_i`.
    pub fn control_affine(
        time_domain: TimeDomain,
        autonomous: PolynomialMap,
        input_columns: Vec<PolynomialMap>,
    ) -> Result<Self> {
        let n_x = autonomous.n_vars();
        check_dim("autonomous output", n_x, autonomous.n_out())?;
        for g in &input_columns {
            check_dim("input column arity", n_x, g.n_vars())?;
            check_dim("input column length", n_x, g.n_out())?;
        }
        let n_u = input_columns.len();
        let columns = Arc::new(input_columns);
        let cols = Arc::clone(&columns);
        let f = autonomous;
        let oracle = Self::new(n_x, n_u, time_domain, move |x, u| {
            let mut out = f.eval(x.as_slice()).expect("checked arity");
            for (i, g) in cols.iter().enumerate() {
                out += g.eval(x.as_slice()).expect("checked arity") * u[i];
            }
            out
        })
        .with_input_jacobian(move |x, _u| {
            let mut jac = DMatrix::zeros(n_x, n_u);
            for (i, g) in columns.iter().enumerate() {
                jac.set_column(i, &g.eval(x.as_slice()).expect("checked arity"));
            }
            jac
        });
        Ok(oracle)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn time_domain(&self) -> TimeDomain {
        self.time_domain
    }

    pub fn has_analytic_input_jacobian(&self) -> bool {
        self.input_jacobian.is_some()
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.n_x, x.len())?;
        check_dim("input", self.n_u, u.len())?;
        let value = (self.eval)(x, u);
        check_dim("dynamics output", self.n_x, value.len())?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(KoopmanError::Domain {
                x: x.iter().copied().collect(),
                reason: format!("dynamics not finite for u = {:?}", u.as_slice()),
            });
        }
        Ok(value)
    }

    /// `df_d/du` at `(x, u)`; central differences when no analytic form was given.
    pub fn input_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("state", self.n_x, x.len())?;
        check_dim("input", self.n_u, u.len())?;
        let jac = match &self.input_jacobian {
            Some(j) => j(x, u),
            None => fd_jacobian(|v| (self.eval)(x, v), u),
        };
        check_dim("input jacobian rows", self.n_x, jac.nrows())?;
        check_dim("input jacobian columns", self.n_u, jac.ncols())?;
        Ok(jac)
    }
}

/// Split `f_d(x, u) = autonomous(x) + input_driven(x, u)` with `input_driven(x, 0) = 0`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    dynamics: DynamicsOracle,
}

/// Decomposes the dynamics into autonomous and input-driven parts.
///
/// The decomposition is checked at the origin; evaluation failures at other
/// states surface from [`Decomposition::autonomous`].
pub fn decompose(f_d: &DynamicsOracle) -> Result<Decomposition> {
    let origin = DVector::zeros(f_d.n_x());
    f_d.eval(&origin, &DVector::zeros(f_d.n_u()))?;
    Ok(Decomposition {
        dynamics: f_d.clone(),
    })
}

impl Decomposition {
    pub fn dynamics(&self) -> &DynamicsOracle {
        &self.dynamics
    }

    pub fn n_x(&self) -> usize {
        self.dynamics.n_x
    }

    pub fn n_u(&self) -> usize {
        self.dynamics.n_u
    }

    /// `f_d(x, 0)`.
    pub fn autonomous(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.dynamics
            .eval(x, &DVector::zeros(self.dynamics.n_u))
            .map_err(|e| match e {
                KoopmanError::Domain { x, .. } => KoopmanError::Domain {
                    x,
                    reason: "autonomous part (u = 0) not finite".into(),
                },
                other => other,
            })
    }

    /// `f_d(x, u) - f_d(x, 0)`; identically zero when `u = 0`.
    pub fn input_driven(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input", self.dynamics.n_u, u.len())?;
        if u.iter().all(|&v| v == 0.0) {
            check_dim("state", self.dynamics.n_x, x.len())?;
            return Ok(DVector::zeros(self.dynamics.n_x));
        }
        Ok(self.dynamics.eval(x, u)? - self.autonomous(x)?)
    }

    /// `d input_driven / du`, which equals `df_d/du`.
    pub fn input_driven_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.dynamics.input_jacobian(x, u)
    }
}

/// Axis-aligned box `lower <= v <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("box upper bound", lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(KoopmanError::InvalidArgument(format!(
                    "box coordinate {i}: need finite lower <= upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The symmetric box `[-r, r]^n`.
    pub fn symmetric(n: usize, radius: f64) -> Result<Self> {
        Self::new(vec![-radius; n], vec![radius; n])
    }

    /// Tightest box around the rows of `samples` (one sample per row).
    pub fn envelope(samples: &DMatrix<f64>) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(KoopmanError::EmptyGrid);
        }
        let lower = samples.column_iter().map(|c| c.min()).collect();
        let upper = samples.column_iter().map(|c| c.max()).collect();
        Self::new(lower, upper)
    }

    /// Grows every side by `fraction` of its width (zero-width sides by `fraction`).
    pub fn inflate(&self, fraction: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                let pad = if u > l { fraction * (u - l) } else { fraction };
                (l - pad, u + pad)
            })
            .unzip();
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| l <= x && x <= u)
    }

    /// `density` equally spaced points per coordinate, including both ends.
    pub fn axis(&self, coord: usize, density: usize) -> Vec<f64> {
        let (l, u) = (self.lower[coord], self.upper[coord]);
        if density <= 1 {
            return vec![0.5 * (l + u)];
        }
        (0..density)
            .map(|i| {
                if i + 1 == density {
                    u
                } else {
                    l + (u - l) * i as f64 / (density - 1) as f64
                }
            })
            .collect()
    }
}
