//! Least-squares fits of LTI Koopman matrices from snapshot data.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, KoopmanError, Result};
use crate::linalg::pinv;
use crate::sim::Trajectory;
use crate::systems::ObservableDictionary;

/// Lifted snapshot pairs `Z`, `Z+` and inputs `U`, one column per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotData {
    pub z: DMatrix<f64>,
    pub z_plus: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

impl SnapshotData {
    pub fn new(z: DMatrix<f64>, z_plus: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        check_dim("Z+ rows", z.nrows(), z_plus.nrows())?;
        check_dim("Z+ columns", z.ncols(), z_plus.ncols())?;
        check_dim("U columns", z.ncols(), u.ncols())?;
        Ok(Self { z, z_plus, u })
    }

    pub fn n_snapshots(&self) -> usize {
        self.z.ncols()
    }

    /// Column-wise concatenation of several datasets.
    pub fn concat(parts: &[SnapshotData]) -> Result<Self> {
        let first = parts.first().ok_or(KoopmanError::EmptyGrid)?;
        let total: usize = parts.iter().map(|p| p.n_snapshots()).sum();
        let mut z = DMatrix::zeros(first.z.nrows(), total);
        let mut z_plus = DMatrix::zeros(first.z.nrows(), total);
        let mut u = DMatrix::zeros(first.u.nrows(), total);
        let mut at = 0;
        for p in parts {
            check_dim("lifted dimension", first.z.nrows(), p.z.nrows())?;
            check_dim("input dimension", first.u.nrows(), p.u.nrows())?;
            let n = p.n_snapshots();
            z.columns_mut(at, n).copy_from(&p.z);
            z_plus.columns_mut(at, n).copy_from(&p.z_plus);
            u.columns_mut(at, n).copy_from(&p.u);
            at += n;
        }
        Self::new(z, z_plus, u)
    }

    /// `Y = [Z; U]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n_f, n_u, n) = (self.z.nrows(), self.u.nrows(), self.n_snapshots());
        let mut y = DMatrix::zeros(n_f + n_u, n);
        y.rows_mut(0, n_f).copy_from(&self.z);
        y.rows_mut(n_f, n_u).copy_from(&self.u);
        y
    }
}

/// Lifts every state of `traj`; pair `k` is `(Phi(x_k), Phi(x_k+1), u_k)`.
pub fn build_snapshots(traj: &Trajectory, dict: &ObservableDictionary) -> Result<SnapshotData> {
    let rows = traj.len();
    if rows < 2 {
        return Err(KoopmanError::InvalidArgument(format!(
            "need at least two samples to form snapshots, got {rows}"
        )));
    }
    let mut lifted = DMatrix::zeros(dict.len(), rows);
    for k in 0..rows {
        lifted.set_column(k, &dict.eval(&traj.state(k))?);
    }
    let n = rows - 1;
    Ok(SnapshotData {
        z: lifted.columns(0, n).into_owned(),
        z_plus: lifted.columns(1, n).into_owned(),
        u: traj.inputs.rows(0, n).transpose(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputFit {
    pub b_hat: DMatrix<f64>,
    /// `||Z+ - A Z - B_hat U||_F`.
    pub residual: f64,
    pub rank: usize,
}

/// `B_hat = (Z+ - A Z) U^+` for a fixed `A`.
pub fn edmdc_input_fit(data: &SnapshotData, a: &DMatrix<f64>) -> Result<InputFit> {
    check_dim("A rows", data.z.nrows(), a.nrows())?;
    check_dim("A columns", data.z.nrows(), a.ncols())?;
    if data.u.iter().all(|&v| v == 0.0) {
        return Err(KoopmanError::InvalidArgument(
            "input data is identically zero; B_hat is undetermined".into(),
        ));
    }
    let target = &data.z_plus - a * &data.z;
    let (u_pinv, rank) = pinv(&data.u);
    if rank < data.u.nrows() {
        log::warn!("input data has rank {rank} < {}; using minimum-norm B_hat", data.u.nrows());
    }
    let b_hat = &target * u_pinv;
    let residual = (target - &b_hat * &data.u).norm();
    Ok(InputFit {
        b_hat,
        residual,
        rank,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullFit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Numerical rank of `Y Y^T`.
    pub rank: usize,
}

fn split(data: &SnapshotData, ab: DMatrix<f64>, rank: usize) -> FullFit {
    let n_f = data.z.nrows();
    FullFit {
        a: ab.columns(0, n_f).into_owned(),
        b: ab.columns(n_f, data.u.nrows()).into_owned(),
        rank,
    }
}

/// `[A B] = V G^+` with `V = Z+ Y^T`, `G = Y Y^T`.
pub fn edmd_full(data: &SnapshotData) -> FullFit {
    let y = data.stacked();
    let v = &data.z_plus * y.transpose();
    let g = &y * y.transpose();
    let (g_pinv, rank) = pinv(&g);
    if rank < g.nrows() {
        log::warn!("Y Y^T has rank {rank} < {}", g.nrows());
    }
    split(data, v * g_pinv, rank)
}

/// `[A B] = Z+ Y^T (Y Y^T + alpha I)^-1`; `alpha = 0` is [`edmd_full`].
///
/// A singular regularized Gram matrix also falls back to the pseudoinverse.
pub fn edmd_tikhonov(data: &SnapshotData, alpha: f64) -> Result<FullFit> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(KoopmanError::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(edmd_full(data));
    }
    let y = data.stacked();
    let v = &data.z_plus * y.transpose();
    let mut g = &y * y.transpose();
    let dim = g.nrows();
    for i in 0..dim {
        g[(i, i)] += alpha;
    }
    // X G = V  <=>  G X^T = V^T (G symmetric).
    let solved = g.clone().cholesky().map(|c| c.solve(&v.transpose()));
    let xt = match solved {
        Some(xt) if xt.iter().all(|v| v.is_finite()) => xt,
        _ => {
            let (g_pinv, _) = pinv(&g);
            g_pinv * v.transpose()
        }
    };
    Ok(split(data, xt.transpose(), dim))
}

/// `0` followed by `10^e` for integer `e` in `[-15, 20]`.
pub fn default_alpha_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((-15..=20).map(|e| 10f64.powi(e)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaCost {
    pub alpha: f64,
    /// `None` when the evaluation diverged.
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    pub best_cost: f64,
    /// One entry per grid point, in ascending `alpha`.
    pub table: Vec<AlphaCost>,
}

/// Minimizes `objective` over `grid`; equal costs go to the smaller `alpha`.
///
/// Errors and non-finite costs count as divergence.
pub fn alpha_grid_search<F>(grid: &[f64], objective: F) -> Result<AlphaSearch>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(KoopmanError::EmptyGrid);
    }
    let mut alphas = grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let table: Vec<AlphaCost> = alphas
        .par_iter()
        .map(|&alpha| AlphaCost {
            alpha,
            cost: objective(alpha).ok().filter(|c| c.is_finite()),
        })
        .collect();
    let best = table
        .iter()
        .filter_map(|r| r.cost.map(|c| (r.alpha, c)))
        .fold(None, |acc: Option<(f64, f64)>, (a, c)| match acc {
            Some((_, bc)) if bc <= c => acc,
            _ => Some((a, c)),
        });
    match best {
        Some((best_alpha, best_cost)) => Ok(AlphaSearch {
            best_alpha,
            best_cost,
            table,
        }),
        None => Err(KoopmanError::AllDiverged { alphas }),
    }
}
