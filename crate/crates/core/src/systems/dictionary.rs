//! Observable dictionaries `Phi(x) = [phi_1(x), ..., phi_nf(x)]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::poly::Monomial;
use crate::error::{check_dim, KoopmanError, Result};
use crate::linalg::fd_jacobian;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A non-polynomial observable given as closures.
#[derive(Clone)]
pub struct CustomObservable {
    pub name: String,
    pub eval: ScalarFn,
    /// Analytic gradient; central differences are used when absent.
    pub gradient: Option<GradientFn>,
}

impl fmt::Debug for CustomObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomObservable")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Observable {
    Monomial(Monomial),
    Custom(CustomObservable),
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Monomial(m) => m.eval(x),
            Observable::Custom(c) => (c.eval)(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Observable::Monomial(m) => (0..x.len()).map(|j| m.partial_eval(j, x)).collect(),
            Observable::Custom(c) => match &c.gradient {
                Some(g) => g(x),
                None => {
                    let at = DVector::from_column_slice(x);
                    let jac = fd_jacobian(
                        |v| DVector::from_element(1, (c.eval)(v.as_slice())),
                        &at,
                    );
                    jac.row(0).iter().copied().collect()
                }
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Observable::Monomial(m) => m.to_string(),
            Observable::Custom(c) => c.name.clone(),
        }
    }
}

/// Ordered observables plus the indices that recover the state from `Phi(x)`.
#[derive(Clone, Debug)]
pub struct ObservableDictionary {
    n_x: usize,
    observables: Vec<Observable>,
    state_selector: Option<Vec<usize>>,
}

impl ObservableDictionary {
    /// Validates that every selected observable is the identity on its coordinate.
    pub fn new(
        n_x: usize,
        observables: Vec<Observable>,
        state_selector: Option<Vec<usize>>,
    ) -> Result<Self> {
        for obs in &observables {
            if let Observable::Monomial(m) = obs {
                check_dim("dictionary monomial", n_x, m.n_vars())?;
            }
        }
        if let Some(sel) = &state_selector {
            check_dim("state selector", n_x, sel.len())?;
            for (coord, &idx) in sel.iter().enumerate() {
                let ok = matches!(
                    observables.get(idx),
                    Some(Observable::Monomial(m)) if m.as_coordinate() == Some(coord)
                );
                if !ok {
                    return Err(KoopmanError::InvalidArgument(format!(
                        "observable {idx} is not the identity on x{}",
                        coord + 1
                    )));
                }
            }
        }
        Ok(Self {
            n_x,
            observables,
            state_selector,
        })
    }

    /// Monomial dictionary; the state selector is inferred from the first
    /// occurrence of each coordinate monomial when all are present.
    pub fn from_monomials(n_x: usize, monomials: Vec<Monomial>) -> Result<Self> {
        let selector: Option<Vec<usize>> = (0..n_x)
            .map(|coord| {
                monomials
                    .iter()
                    .position(|m| m.as_coordinate() == Some(coord))
            })
            .collect();
        Self::new(
            n_x,
            monomials.into_iter().map(Observable::Monomial).collect(),
            selector,
        )
    }

    /// Parses a comma-separated list such as `"x1,x2,x1^2"`.
    pub fn parse(n_x: usize, text: &str) -> Result<Self> {
        let monomials = text
            .split(',')
            .map(|s| Monomial::parse(n_x, s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_monomials(n_x, monomials)
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn state_selector(&self) -> Option<&[usize]> {
        self.state_selector.as_deref()
    }

    /// All observables as monomials, or `None` if any is a black box.
    pub fn monomials(&self) -> Option<Vec<&Monomial>> {
        self.observables
            .iter()
            .map(|o| match o {
                Observable::Monomial(m) => Some(m),
                Observable::Custom(_) => None,
            })
            .collect()
    }

    pub fn describe(&self) -> Vec<String> {
        self.observables.iter().map(Observable::describe).collect()
    }

    /// `C` with `C Phi(x) = x`.
    pub fn output_matrix(&self) -> Result<DMatrix<f64>> {
        let sel = self
            .state_selector
            .as_ref()
            .ok_or(KoopmanError::MissingStateSelector)?;
        let mut c = DMatrix::zeros(self.n_x, self.len());
        for (row, &col) in sel.iter().enumerate() {
            c[(row, col)] = 1.0;
        }
        Ok(c)
    }

    /// Reads the state back out of a lifted vector.
    pub fn recover_state(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let sel = self
            .state_selector
            .as_ref()
            .ok_or(KoopmanError::MissingStateSelector)?;
        check_dim("lifted state", self.len(), z.len())?;
        Ok(DVector::from_iterator(sel.len(), sel.iter().map(|&i| z[i])))
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("dictionary argument", self.n_x, x.len())?;
        let xs = x.as_slice();
        let values = DVector::from_iterator(self.len(), self.observables.iter().map(|o| o.eval(xs)));
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(KoopmanError::NonFinite {
                what: format!("observable '{}'", self.observables[index].describe()),
                index,
            });
        }
        Ok(values)
    }

    /// `dPhi/dx` at `x`, an `n_f x n_x` matrix.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.len(), self.n_x);
        self.jacobian_into(x.as_slice(), &mut jac)?;
        Ok(jac)
    }

    /// [`Self::jacobian`] written into a preallocated `n_f x n_x` matrix.
    pub fn jacobian_into(&self, xs: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        check_dim("dictionary argument", self.n_x, xs.len())?;
        check_dim("jacobian rows", self.len(), jac.nrows())?;
        check_dim("jacobian columns", self.n_x, jac.ncols())?;
        for (i, obs) in self.observables.iter().enumerate() {
            if let Observable::Monomial(m) = obs {
                for j in 0..self.n_x {
                    jac[(i, j)] = m.partial_eval(j, xs);
                }
                if let Some(j) = (0..self.n_x).find(|&j| !jac[(i, j)].is_finite()) {
                    return Err(KoopmanError::NonFinite {
                        what: format!("gradient of observable '{}' (coordinate {})", obs.describe(), j + 1),
                        index: i,
                    });
                }
                continue;
            }
            let grad = obs.gradient(xs);
            check_dim("observable gradient", self.n_x, grad.len())?;
            for (j, g) in grad.into_iter().enumerate() {
                if !g.is_finite() {
                    return Err(KoopmanError::NonFinite {
                        what: format!("gradient of observable '{}'", obs.describe()),
                        index: i,
                    });
                }
                jac[(i, j)] = g;
            }
        }
        Ok(())
    }
}

/// All monomials with `1 <= degree <= max_degree`, in graded-lex order.
///
/// The coordinate monomials come first so the state selector is `[0, n_x)`.
/// When `include_constant` is set the constant observable is appended last.
pub fn monomial_dictionary(
    n_x: usize,
    degree: u32,
    include_constant: bool,
) -> Result<ObservableDictionary> {
    if degree < 1 {
        return Err(KoopmanError::InvalidArgument(
            "dictionary degree must be at least 1".into(),
        ));
    }
    if n_x == 0 {
        return Err(KoopmanError::InvalidArgument("state dimension must be positive".into()));
    }
    let mut monomials = Vec::new();
    for total in 1..=degree {
        let mut current = vec![0u32; n_x];
        compositions(total, 0, &mut current, &mut monomials);
    }
    monomials.sort();
    if include_constant {
        monomials.push(Monomial::one(n_x));
    }
    ObservableDictionary::from_monomials(n_x, monomials)
}

fn compositions(remaining: u32, var: usize, current: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if var + 1 == current.len() {
        current[var] = remaining;
        out.push(Monomial::new(current.clone()));
        return;
    }
    for e in 0..=remaining {
        current[var] = e;
        compositions(remaining - e, var + 1, current, out);
    }
    current[var] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn degree_three_has_nine_observables() {
        let d = monomial_dictionary(2, 3, false).unwrap();
        assert_eq!(d.len(), 9);
        assert_eq!(
            d.describe(),
            ["x1", "x2", "x1^2", "x1*x2", "x2^2", "x1^3", "x1^2*x2", "x1*x2^2", "x2^3"]
        );
        assert_eq!(d.state_selector(), Some(&[0usize, 1][..]));
    }

    #[test]
    fn degree_one_is_identity() {
        let d = monomial_dictionary(2, 1, false).unwrap();
        assert_eq!(d.describe(), ["x1", "x2"]);
    }

    #[test]
    fn counts_match_binomial() {
        assert_eq!(monomial_dictionary(2, 20, false).unwrap().len(), 230);
        for n_x in 1..=4 {
            for degree in 1..=6u32 {
                let d = monomial_dictionary(n_x, degree, false).unwrap();
                assert_eq!(
                    d.len() as u64,
                    binomial(n_x as u64 + degree as u64, n_x as u64) - 1
                );
            }
        }
    }

    #[test]
    fn constant_goes_last() {
        let d = monomial_dictionary(2, 2, true).unwrap();
        assert_eq!(d.describe().last().unwrap(), "1");
        assert_eq!(d.state_selector(), Some(&[0usize, 1][..]));
    }

    #[test]
    fn degree_zero_rejected() {
        assert!(monomial_dictionary(2, 0, false).is_err());
    }

    #[test]
    fn example_dictionary_at_ones() {
        let d = ObservableDictionary::parse(2, "x1,x2,x1^2").unwrap();
        let z = d.eval(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 1.0, 1.0]);
        let c = d.output_matrix().unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn vanishes_at_origin() {
        let d = monomial_dictionary(3, 4, false).unwrap();
        assert_eq!(d.eval(&DVector::zeros(3)).unwrap(), DVector::zeros(d.len()));
    }

    #[test]
    fn degree_four_matches_direct_powers() {
        let d = monomial_dictionary(2, 4, false).unwrap();
        let (a, b) = (0.3_f64, -0.7_f64);
        let z = d.eval(&DVector::from_vec(vec![a, b])).unwrap();
        let mut expected = Vec::new();
        for total in 1..=4 {
            for i in (0..=total).rev() {
                expected.push(a.powi(i) * b.powi(total - i));
            }
        }
        assert_eq!(z.as_slice(), expected.as_slice());
    }

    #[test]
    fn missing_selector_means_no_output_matrix() {
        let d = ObservableDictionary::parse(2, "x1,x1^2").unwrap();
        assert!(d.state_selector().is_none());
        assert!(matches!(d.output_matrix(), Err(KoopmanError::MissingStateSelector)));
    }

    #[test]
    fn bad_selector_rejected() {
        let obs = vec![Observable::Monomial(Monomial::parse(2, "x1^2").unwrap())];
        assert!(ObservableDictionary::new(2, obs, Some(vec![0, 0])).is_err());
    }

    #[test]
    fn custom_observable_uses_finite_differences() {
        let sin = CustomObservable {
            name: "sin(x1)".into(),
            eval: Arc::new(|x| x[0].sin()),
            gradient: None,
        };
        let d = ObservableDictionary::new(
            1,
            vec![
                Observable::Monomial(Monomial::var(1, 0)),
                Observable::Custom(sin),
            ],
            Some(vec![0]),
        )
        .unwrap();
        let j = d.jacobian(&DVector::from_vec(vec![0.4])).unwrap();
        assert!((j[(1, 0)] - 0.4_f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn non_finite_names_observable() {
        let inv = CustomObservable {
            name: "1/x1".into(),
            eval: Arc::new(|x| 1.0 / x[0]),
            gradient: None,
        };
        let d = ObservableDictionary::new(1, vec![Observable::Custom(inv)], None).unwrap();
        match d.eval(&DVector::zeros(1)) {
            Err(KoopmanError::NonFinite { index, .. }) => assert_eq!(index, 0),
            other => panic!("unexpected {other:?}"),
        }
    }
}
