//! Error between an exact LPV Koopman model and an LTI approximation sharing its `A`.
//!
//! With `e_k = z_k - zhat_k`, `e_0 = 0` and `beta >= ||B_z(p) - B_hat||` on the
//! operating region, `||e_k|| <= beta ||u||_inf sum_{j<k} ||A^j||`, which is in
//! turn below `beta ||u||_inf / (1 - sigma_max(A))` when `sigma_max(A) < 1`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, KoopmanError, Result};
use crate::linalg::{sigma_max, spectral_radius};
use crate::lpv::{LpvKoopmanModel, LtiKoopmanModel};
use crate::systems::{DomainBox, ObservableDictionary};

pub const DEFAULT_GRID_DENSITY: usize = 101;
pub const DEFAULT_BOX_INFLATION: f64 = 0.1;

/// `(rho(A), sigma_max(A))`.
pub fn stability_scalars(a: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_dim("A columns", a.nrows(), a.ncols())?;
    Ok((spectral_radius(a), sigma_max(a)))
}

/// Largest input-matrix gap found and where.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaEstimate {
    pub beta: f64,
    pub argmax_x: DVector<f64>,
    pub argmax_u: DVector<f64>,
    pub evaluated: usize,
}

fn gap(
    model: &LpvKoopmanModel,
    dict: &ObservableDictionary,
    b_hat: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let z = dict.eval(x)?;
    Ok(sigma_max(&(model.input_matrix(&z, u)? - b_hat)))
}

fn reduce(
    best: Option<(f64, usize)>,
    item: (f64, usize),
) -> Option<(f64, usize)> {
    match best {
        // Keep the first index on ties so the result is deterministic.
        Some((b, i)) if b > item.0 || (b == item.0 && i < item.1) => Some((b, i)),
        _ => Some(item),
    }
}

/// `max ||B_z(mu(Phi(x), u)) - B_hat||_2,2` over a uniform grid of `xs x us`.
///
/// `density` points per coordinate, endpoints included.
pub fn beta_grid(
    model: &LpvKoopmanModel,
    dict: &ObservableDictionary,
    b_hat: &DMatrix<f64>,
    xs: &DomainBox,
    us: &DomainBox,
    density: usize,
) -> Result<BetaEstimate> {
    check_dim("state box", dict.n_x(), xs.dim())?;
    check_dim("input box", model.n_u(), us.dim())?;
    if density == 0 {
        return Err(KoopmanError::EmptyGrid);
    }
    let axes: Vec<Vec<f64>> = (0..xs.dim())
        .map(|i| xs.axis(i, density))
        .chain((0..us.dim()).map(|i| us.axis(i, density)))
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    if total == 0 {
        return Err(KoopmanError::EmptyGrid);
    }
    let point = |mut index: usize| -> (DVector<f64>, DVector<f64>) {
        let mut coords = vec![0.0; axes.len()];
        for (c, axis) in coords.iter_mut().zip(&axes).rev() {
            *c = axis[index % axis.len()];
            index /= axis.len();
        }
        let (x, u) = coords.split_at(xs.dim());
        (DVector::from_column_slice(x), DVector::from_column_slice(u))
    };
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|i| {
            let (x, u) = point(i);
            gap(model, dict, b_hat, &x, &u)
        })
        .collect::<Result<_>>()?;
    let (beta, idx) = values
        .iter()
        .enumerate()
        .fold(None, |best, (i, &v)| reduce(best, (v, i)))
        .expect("non-empty grid");
    let (argmax_x, argmax_u) = point(idx);
    Ok(BetaEstimate {
        beta,
        argmax_x,
        argmax_u,
        evaluated: total,
    })
}

/// Same maximum over the visited pairs `(x_k, u_k)` only.
pub fn beta_trajectory(
    model: &LpvKoopmanModel,
    dict: &ObservableDictionary,
    b_hat: &DMatrix<f64>,
    states: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
) -> Result<BetaEstimate> {
    check_dim("trajectory rows", states.nrows(), inputs.nrows())?;
    if states.nrows() == 0 {
        return Err(KoopmanError::EmptyGrid);
    }
    let mut best = None;
    for k in 0..states.nrows() {
        let x = states.row(k).transpose();
        let u = inputs.row(k).transpose();
        best = reduce(best, (gap(model, dict, b_hat, &x, &u)?, k));
    }
    let (beta, k) = best.expect("non-empty trajectory");
    Ok(BetaEstimate {
        beta,
        argmax_x: states.row(k).transpose(),
        argmax_u: inputs.row(k).transpose(),
        evaluated: states.nrows(),
    })
}

/// `||e_k||` from parallel simulation and from the error recurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTrajectory {
    /// `||z_k - zhat_k||`, `k = 0..=N`.
    pub simulated: Vec<f64>,
    /// `||e_k||` with `e_k = A e_k-1 + (A - A_hat) zhat_k-1 + (B_k-1 - B_hat) u_k-1`.
    pub recurrence: Vec<f64>,
    /// Largest entrywise gap between the two error vectors.
    pub max_discrepancy: f64,
    /// Exact lifted states, one row per step.
    pub exact_states: DMatrix<f64>,
}

/// Runs both discrete-time models from the same `z0` under `inputs` (`N + 1` rows).
pub fn error_trajectory(
    exact: &LpvKoopmanModel,
    approx: &LtiKoopmanModel,
    z0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    n: usize,
) -> Result<ErrorTrajectory> {
    check_dim("input samples (N + 1)", n + 1, inputs.nrows())?;
    check_dim("LTI state dimension", exact.n_f(), approx.n_f())?;
    let a_gap = exact.a() - &approx.a;
    let mut z = z0.clone();
    let mut zhat = z0.clone();
    let mut e = DVector::zeros(z0.len());
    let mut simulated = vec![0.0];
    let mut recurrence = vec![0.0];
    let mut max_discrepancy = 0.0_f64;
    let mut exact_states = DMatrix::zeros(n + 1, z0.len());
    exact_states.set_row(0, &z0.transpose());
    for k in 0..n {
        let u = inputs.row(k).transpose();
        let b_k = exact.input_matrix(&z, &u)?;
        e = exact.a() * &e + &a_gap * &zhat + (&b_k - &approx.b_hat) * &u;
        z = exact.a() * &z + b_k * &u;
        zhat = approx.step(&zhat, &u)?;
        if z.iter().chain(zhat.iter()).any(|v| !v.is_finite()) {
            return Err(KoopmanError::Divergence {
                label: "error trajectory".into(),
                step: k + 1,
            });
        }
        let diff = &z - &zhat;
        max_discrepancy = max_discrepancy.max((&diff - &e).amax());
        simulated.push(diff.norm());
        recurrence.push(e.norm());
        exact_states.set_row(k + 1, &z.transpose());
    }
    Ok(ErrorTrajectory {
        simulated,
        recurrence,
        max_discrepancy,
        exact_states,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsCurve {
    /// `beta ||u||_inf sum_{j<k} ||A^j||`, `k = 0..=N`.
    pub timevarying: Vec<f64>,
    /// `beta ||u||_inf / (1 - sigma_max(A))`, only when `sigma_max(A) < 1`.
    pub absolute: Option<f64>,
    /// `max_k ||u_k||_2` over the forcing samples `k < N`.
    pub u_linf: f64,
}

pub fn bounds_curve(a: &DMatrix<f64>, beta: f64, inputs: &DMatrix<f64>, n: usize) -> Result<BoundsCurve> {
    let (_, sigma) = stability_scalars(a)?;
    if inputs.nrows() < n {
        return Err(KoopmanError::DimensionMismatch {
            what: "input samples".into(),
            expected: n,
            got: inputs.nrows(),
        });
    }
    let u_linf = (0..n)
        .map(|k| inputs.row(k).norm())
        .fold(0.0_f64, f64::max);
    let scale = beta * u_linf;
    let mut timevarying = Vec::with_capacity(n + 1);
    timevarying.push(0.0);
    let mut power = DMatrix::identity(a.nrows(), a.ncols());
    let mut sum = 0.0;
    for _ in 0..n {
        sum += sigma_max(&power);
        timevarying.push(scale * sum);
        power = a * power;
    }
    let absolute = (sigma < 1.0).then(|| scale / (1.0 - sigma));
    Ok(BoundsCurve {
        timevarying,
        absolute,
        u_linf,
    })
}

/// Scalars and aligned per-step arrays of a bound computation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub rho_a: f64,
    pub sigma_a: f64,
    pub beta: f64,
    pub u_linf: f64,
    pub absolute_bound: Option<f64>,
    pub timevarying_bound: Vec<f64>,
    pub error_norm: Vec<f64>,
}

impl BoundReport {
    pub fn new(a: &DMatrix<f64>, beta: f64, errors: &ErrorTrajectory, inputs: &DMatrix<f64>) -> Result<Self> {
        let n = errors.simulated.len() - 1;
        let (rho_a, sigma_a) = stability_scalars(a)?;
        let curve = bounds_curve(a, beta, inputs, n)?;
        Ok(Self {
            rho_a,
            sigma_a,
            beta,
            u_linf: curve.u_linf,
            absolute_bound: curve.absolute,
            timevarying_bound: curve.timevarying,
            error_norm: errors.simulated.clone(),
        })
    }

    /// First step where `error_norm <= timevarying_bound <= absolute_bound` fails, if any.
    pub fn first_violation(&self, slack: f64) -> Option<usize> {
        (0..self.error_norm.len()).find(|&k| {
            let tv = self.timevarying_bound[k];
            self.error_norm[k] > tv + slack
                || self.absolute_bound.is_some_and(|abs| tv > abs + slack)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::LiftedModel;
    use crate::lpv::{make_lpv, make_lti};
    use crate::quadrature::GaussLegendre;
    use crate::sim::white_noise;
    use crate::systems::dt_example;

    fn dt_model() -> (LpvKoopmanModel, ObservableDictionary) {
        let sys = dt_example();
        let lifted = LiftedModel::from_system(&sys, GaussLegendre::default(), 1e-9).unwrap();
        (make_lpv(&lifted).unwrap(), sys.dictionary)
    }

    #[test]
    fn scalars() {
        let (m, _) = dt_model();
        let (rho, sigma) = stability_scalars(m.a()).unwrap();
        assert_eq!(rho, 0.7);
        assert!(sigma > 0.7 && sigma < 1.0);
        assert_eq!(stability_scalars(&DMatrix::identity(3, 3)).unwrap(), (1.0, 1.0));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        let (rho, sigma) = stability_scalars(&d).unwrap();
        assert_eq!(rho, 0.9);
        assert!((sigma - 0.9).abs() < 1e-15);
    }

    #[test]
    fn beta_brute_force_oracle() {
        let (m, dict) = dt_model();
        let b_hat = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let xs = DomainBox::symmetric(2, 2.0).unwrap();
        let us = DomainBox::symmetric(1, 1.0).unwrap();
        let est = beta_grid(&m, &dict, &b_hat, &xs, &us, 9).unwrap();
        // Independent closed form: B - B_hat = [0; x1^2; 1.4 x1 + u].
        let mut oracle = 0.0_f64;
        for i in 0..9 {
            for j in 0..9 {
                for k in 0..9 {
                    let x1 = -2.0 + 0.5 * i as f64;
                    let _x2 = -2.0 + 0.5 * j as f64;
                    let u = -1.0 + 0.25 * k as f64;
                    let v = (x1.powi(4) + (1.4 * x1 + u).powi(2)).sqrt();
                    oracle = oracle.max(v);
                }
            }
        }
        assert!((est.beta - oracle).abs() < 1e-12);
        assert_eq!(est.evaluated, 729);
        let at = gap(&m, &dict, &b_hat, &est.argmax_x, &est.argmax_u).unwrap();
        assert_eq!(at, est.beta);
    }

    #[test]
    fn beta_is_zero_for_matching_constant_input() {
        let (m, dict) = dt_model();
        // u = 0 and x1 = 0: B = [1; 0; 0].
        let b_hat = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let xs = DomainBox::new(vec![0.0, -1.0], vec![0.0, 1.0]).unwrap();
        let us = DomainBox::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(beta_grid(&m, &dict, &b_hat, &xs, &us, 5).unwrap().beta, 0.0);
        assert!(matches!(beta_grid(&m, &dict, &b_hat, &xs, &us, 0), Err(KoopmanError::EmptyGrid)));
    }

    #[test]
    fn recurrence_matches_simulation() {
        let (m, _) = dt_model();
        let n = 100;
        let u = DMatrix::from_column_slice(n + 1, 1, &white_noise(3, 0.0, 0.5, n + 1));
        let b_hat = DMatrix::from_column_slice(3, 1, &[1.0, 0.3, 0.1]);
        let approx = make_lti(m.a().clone(), b_hat, m.c().clone()).unwrap();
        let z0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let err = error_trajectory(&m, &approx, &z0, &u, n).unwrap();
        assert!(err.max_discrepancy < 1e-12);
        assert_eq!(err.simulated[0], 0.0);
        let zero = error_trajectory(&m, &approx, &z0, &DMatrix::zeros(n + 1, 1), n).unwrap();
        assert!(zero.simulated.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn curve_simple_cases() {
        let inputs = DMatrix::from_column_slice(4, 1, &[0.5, -2.0, 1.0, 9.0]);
        let a = DMatrix::zeros(2, 2);
        let c = bounds_curve(&a, 3.0, &inputs, 3).unwrap();
        assert_eq!(c.u_linf, 2.0);
        assert_eq!(c.timevarying, vec![0.0, 6.0, 6.0, 6.0]);
        assert_eq!(c.absolute, Some(6.0));
        let unstable = DMatrix::from_diagonal(&DVector::from_vec(vec![1.1, 0.2]));
        let c = bounds_curve(&unstable, 1.0, &inputs, 3).unwrap();
        assert_eq!(c.absolute, None);
        assert_eq!(c.timevarying[1], 2.0);
    }

    #[test]
    fn report_orders_bounds() {
        let (m, dict) = dt_model();
        let n = 100;
        let u = DMatrix::from_column_slice(n + 1, 1, &white_noise(11, 0.0, 0.5, n + 1));
        let b_hat = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let approx = make_lti(m.a().clone(), b_hat.clone(), m.c().clone()).unwrap();
        let z0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let err = error_trajectory(&m, &approx, &z0, &u, n).unwrap();
        let states = &err.exact_states * m.c().transpose();
        let beta = beta_trajectory(&m, &dict, &b_hat, &states.rows(0, n).into_owned(), &u.rows(0, n).into_owned())
            .unwrap()
            .beta;
        let report = BoundReport::new(m.a(), beta, &err, &u).unwrap();
        assert_eq!(report.first_violation(0.0), None);
        let tv = &report.timevarying_bound;
        assert!(tv.windows(2).all(|w| w[0] <= w[1]));
        assert!(tv[n] - tv[n - 1] < 1e-9);
        assert!(tv[n] < report.absolute_bound.unwrap());
    }
}
