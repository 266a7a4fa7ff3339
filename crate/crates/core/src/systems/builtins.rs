//! The two reference systems shipped with the library.

use nalgebra::{DMatrix, DVector};

use super::dictionary::ObservableDictionary;
use super::dynamics::{DynamicsOracle, TimeDomain};
use super::poly::{coeff_to_f64, parse_coeff, PolynomialMap};
use crate::error::{KoopmanError, Result};

/// A nonlinear system with everything needed to lift it.
#[derive(Clone, Debug)]
pub struct System {
    pub name: String,
    pub dynamics: DynamicsOracle,
    /// Symbolic autonomous part `f_d(x, 0)`, when polynomial.
    pub autonomous: Option<PolynomialMap>,
    /// Symbolic input columns of a control-affine system.
    pub input_columns: Option<Vec<PolynomialMap>>,
    pub dictionary: ObservableDictionary,
    pub x0: DVector<f64>,
}

impl System {
    pub fn time_domain(&self) -> TimeDomain {
        self.dynamics.time_domain()
    }

    /// Control-affine polynomial system `f(x) + sum_i g_i(x) u_i`.
    pub fn polynomial(
        name: &str,
        time_domain: TimeDomain,
        autonomous: PolynomialMap,
        input_columns: Vec<PolynomialMap>,
        dictionary: ObservableDictionary,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let dynamics =
            DynamicsOracle::control_affine(time_domain, autonomous.clone(), input_columns.clone())?;
        Ok(Self {
            name: name.to_string(),
            dynamics,
            autonomous: Some(autonomous),
            input_columns: Some(input_columns),
            dictionary,
            x0,
        })
    }
}

pub const CT_COEF_MU: &str = "-0.05";
pub const CT_COEF_LAMBDA: &str = "-1";
pub const DT_COEF_A1: &str = "0.7";
pub const DT_COEF_A2: &str = "0.7";
pub const DT_COEF_A3: &str = "0.5";

/// Continuous-time example with exponential input nonlinearities:
///
/// ```text
/// dx1/dt = mu*x1 - x1 + x1*exp(u1)
/// dx2/dt = lambda*(x2 - x1^2) - x2 + u1*u2 + x2*exp(u2)
/// ```
///
/// with `mu = -0.05`, `lambda = -1`, lifted by `[x1, x2, x1^2]`.
pub fn ct_example() -> System {
    let coef_mu = coeff_to_f64(&parse_coeff(CT_COEF_MU).unwrap());
    let coef_lambda = coeff_to_f64(&parse_coeff(CT_COEF_LAMBDA).unwrap());
    let dynamics = DynamicsOracle::new(2, 2, TimeDomain::Continuous, move |x, u| {
        DVector::from_vec(vec![
            coef_mu * x[0] - x[0] + x[0] * u[0].exp(),
            coef_lambda * (x[1] - x[0] * x[0]) - x[1] + u[0] * u[1] + x[1] * u[1].exp(),
        ])
    })
    .with_input_jacobian(|x, u| {
        DMatrix::from_row_slice(
            2,
            2,
            &[x[0] * u[0].exp(), 0.0, u[1], u[0] + x[1] * u[1].exp()],
        )
    });
    let autonomous = PolynomialMap::parse_rows(
        2,
        &[
            &format!("{CT_COEF_MU}*x1"),
            &format!("{CT_COEF_LAMBDA}*x2 - {CT_COEF_LAMBDA}*x1^2"),
        ],
    )
    .expect("built-in polynomial parses");
    System {
        name: "ct-example".into(),
        dynamics,
        autonomous: Some(autonomous),
        input_columns: None,
        dictionary: ObservableDictionary::parse(2, "x1,x2,x1^2").expect("built-in dictionary"),
        x0: DVector::from_vec(vec![1.0, 1.0]),
    }
}

/// Discrete-time control-affine example:
///
/// ```text
/// x1+ = a1*x1 + u
/// x2+ = a2*x2 - a3*x1^2 + x1^2*u
/// ```
///
/// with `a1 = a2 = 0.7`, `a3 = 0.5`, lifted by `[x1, x2, x1^2]`.
pub fn dt_example() -> System {
    let autonomous = PolynomialMap::parse_rows(
        2,
        &[
            &format!("{DT_COEF_A1}*x1"),
            &format!("{DT_COEF_A2}*x2 - {DT_COEF_A3}*x1^2"),
        ],
    )
    .expect("built-in polynomial parses");
    let input = PolynomialMap::parse_rows(2, &["1", "x1^2"]).expect("built-in polynomial parses");
    System::polynomial(
        "dt-example",
        TimeDomain::Discrete,
        autonomous,
        vec![input],
        ObservableDictionary::parse(2, "x1,x2,x1^2").expect("built-in dictionary"),
        DVector::from_vec(vec![1.0, 1.0]),
    )
    .expect("built-in system is consistent")
}

pub fn builtin(name: &str) -> Result<System> {
    match name {
        "ct-example" => Ok(ct_example()),
        "dt-example" => Ok(dt_example()),
        other => Err(KoopmanError::InvalidArgument(format!(
            "unknown built-in system '{other}' (expected ct-example or dt-example)"
        ))),
    }
}
