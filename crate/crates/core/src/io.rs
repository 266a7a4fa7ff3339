//! Serialization with 17 significant digits, so every `f64` round-trips bit-exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::bounds::BoundReport;
use crate::error::{KoopmanError, Result};
use crate::lifting::LiftedModel;
use crate::lpv::{LpvKoopmanModel, LtiKoopmanModel};
use crate::quadrature::QuadratureSpec;
use crate::sim::{ErrorReport, Trajectory};
use crate::systems::TimeDomain;

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// An `f64` written with [`fmt17`]; non-finite values become `null`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Real17(pub f64);

impl Serialize for Real17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Real17 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Option::<f64>::deserialize(d).map(|v| Real17(v.unwrap_or(f64::NAN)))
    }
}

/// Row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixDoc(pub Vec<Vec<Real17>>);

impl MatrixDoc {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self(
            m.row_iter()
                .map(|r| r.iter().map(|&v| Real17(v)).collect())
                .collect(),
        )
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != cols) {
            return Err(KoopmanError::Parse("ragged matrix".into()));
        }
        Ok(DMatrix::from_fn(rows, cols, |i, j| self.0[i][j].0))
    }
}

pub fn reals(v: &[f64]) -> Vec<Real17> {
    v.iter().map(|&x| Real17(x)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedDoc {
    pub time_domain: TimeDomain,
    pub observables: Vec<String>,
    pub state_selector: Option<Vec<usize>>,
    pub a: MatrixDoc,
    pub span_residual: Real17,
    pub exact: bool,
    pub quadrature: QuadratureSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulingDoc {
    pub kind: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpvDoc {
    pub scheduling: SchedulingDoc,
    pub n_u: usize,
    pub c: MatrixDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtiDoc {
    pub a: MatrixDoc,
    pub b_hat: MatrixDoc,
    pub c: MatrixDoc,
}

/// `model.json`: the lifted model, its LPV recast and any fitted LTI models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub system: String,
    pub lifted: LiftedDoc,
    pub lpv: Option<LpvDoc>,
    #[serde(default)]
    pub lti: Vec<(String, LtiDoc)>,
}

impl LiftedDoc {
    pub fn new(model: &LiftedModel) -> Self {
        let dict = model.dictionary();
        Self {
            time_domain: model.time_domain(),
            observables: dict.describe(),
            state_selector: dict.state_selector().map(<[usize]>::to_vec),
            a: MatrixDoc::from_matrix(model.a()),
            span_residual: Real17(model.residual()),
            exact: model.is_exact(),
            quadrature: model.quadrature().spec(),
        }
    }
}

impl LpvDoc {
    pub fn new(model: &LpvKoopmanModel) -> Self {
        Self {
            scheduling: SchedulingDoc {
                kind: model.scheduling().kind().to_string(),
                dim: model.scheduling().dim(),
            },
            n_u: model.n_u(),
            c: MatrixDoc::from_matrix(model.c()),
        }
    }
}

impl LtiDoc {
    pub fn new(model: &LtiKoopmanModel) -> Self {
        Self {
            a: MatrixDoc::from_matrix(&model.a),
            b_hat: MatrixDoc::from_matrix(&model.b_hat),
            c: MatrixDoc::from_matrix(&model.c),
        }
    }

    pub fn to_model(&self) -> Result<LtiKoopmanModel> {
        crate::lpv::make_lti(self.a.to_matrix()?, self.b_hat.to_matrix()?, self.c.to_matrix()?)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| KoopmanError::Parse(e.to_string()))
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| KoopmanError::Parse(e.to_string()))
}

/// CSV with a header row; every cell through [`fmt17`].
pub fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt17).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `t,x1..xn,u1..unu`, one row per sample.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=traj.n_x()).map(|i| format!("x{i}")))
        .chain((1..=traj.n_u()).map(|i| format!("u{i}")))
        .collect();
    csv_table(
        &header,
        (0..traj.len()).map(|k| {
            std::iter::once(traj.times[k])
                .chain(traj.states.row(k).iter().copied())
                .chain(traj.inputs.row(k).iter().copied())
                .collect()
        }),
    )
}

/// Parses a CSV written by [`csv_table`] back into its header and rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| KoopmanError::Parse("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|e| KoopmanError::Parse(format!("{c}: {e}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// One state of an [`ErrorReport`] with 17-digit norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateErrorDoc {
    pub state_index: usize,
    pub l2: Real17,
    pub linf: Real17,
}

pub fn error_report_docs(report: &ErrorReport) -> Vec<StateErrorDoc> {
    report
        .states
        .iter()
        .map(|s| StateErrorDoc {
            state_index: s.state_index,
            l2: Real17(s.l2),
            linf: Real17(s.linf),
        })
        .collect()
}

#[derive(Serialize)]
struct BoundDoc {
    rho_a: Real17,
    sigma_a: Real17,
    beta: Real17,
    u_linf: Real17,
    absolute_bound: AbsoluteBound,
    k: Vec<usize>,
    error_norm: Vec<Real17>,
    tv_bound: Vec<Real17>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum AbsoluteBound {
    Value(Real17),
    NotApplicable(&'static str),
}

pub const NOT_APPLICABLE: &str = "not applicable (sigma_max(A) >= 1)";

pub fn bound_report_json(report: &BoundReport) -> Result<String> {
    let absolute_bound = match report.absolute_bound {
        Some(v) => AbsoluteBound::Value(Real17(v)),
        None => AbsoluteBound::NotApplicable(NOT_APPLICABLE),
    };
    to_json(&BoundDoc {
        rho_a: Real17(report.rho_a),
        sigma_a: Real17(report.sigma_a),
        beta: Real17(report.beta),
        u_linf: Real17(report.u_linf),
        absolute_bound,
        k: (0..report.error_norm.len()).collect(),
        error_norm: reals(&report.error_norm),
        tv_bound: reals(&report.timevarying_bound),
    })
}

/// `k,error_norm,tv_bound`.
pub fn bound_report_csv(report: &BoundReport) -> String {
    let mut out = String::from("k,error_norm,tv_bound\n");
    for (k, (e, tv)) in report
        .error_norm
        .iter()
        .zip(&report.timevarying_bound)
        .enumerate()
    {
        let _ = writeln!(out, "{k},{},{}", fmt17(*e), fmt17(*tv));
    }
    out
}

/// Deserializes a JSON number written by [`Real17`], rejecting `null`.
pub fn finite_real<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = Real17::deserialize(d)?.0;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(D::Error::custom("expected a finite number"))
    }
}
