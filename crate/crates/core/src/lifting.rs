//! Exact lifted forms `Phi+ = A Phi + Bcal(x, u)` (or `dPhi/dt = ...`).
//!
//! `A` comes from symbolic coefficient matching of the autonomous dynamics
//! against a monomial dictionary. The input term is a Jacobian-vector product
//! in continuous time and a line integral of the dictionary Jacobian along
//! `f(x) + s g(x, u)`, `s in [0, 1]`, in discrete time. The factorization
//! `Bcal(x, u) = B(x, u) u` integrates the input Jacobian of `Bcal` along the
//! ray `s u`.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, KoopmanError, Result};
use crate::linalg::{fd_jacobian, pinv};
use crate::quadrature::GaussLegendre;
use crate::systems::{
    coeff_to_f64, decompose, Coeff, Decomposition, DomainBox, Monomial, ObservableDictionary,
    Polynomial, PolynomialMap, System, TimeDomain,
};

pub const DEFAULT_SPAN_TOLERANCE: f64 = 1e-9;

/// A term of the lifted dynamics that the dictionary cannot represent.
#[derive(Clone, Debug, PartialEq)]
pub struct OutOfSpanTerm {
    /// Observable (or input channel row) whose expansion produced the term.
    pub row: usize,
    pub monomial: Monomial,
    pub coefficient: f64,
}

/// Result of matching lifted dynamics against the dictionary.
#[derive(Clone, Debug)]
pub struct SpanFit {
    pub a: DMatrix<f64>,
    /// Largest absolute coefficient left outside `span{Phi}`.
    pub residual: f64,
    pub out_of_span: Vec<OutOfSpanTerm>,
    /// Some observables coincide, so `A` is the minimum-norm solution.
    pub linearly_dependent: bool,
    /// Obtained symbolically (as opposed to a sampled least-squares fit).
    pub symbolic: bool,
}

impl SpanFit {
    fn into_checked(self, tolerance: f64) -> Result<Self> {
        if self.residual > tolerance {
            return Err(KoopmanError::InvariantSubspaceViolation {
                residual: self.residual,
                offending: self
                    .out_of_span
                    .iter()
                    .map(|t| format!("row {}: {:e}*{}", t.row, t.coefficient, t.monomial))
                    .collect(),
            });
        }
        Ok(self)
    }
}

fn dictionary_monomials(dict: &ObservableDictionary) -> Result<Vec<Monomial>> {
    Ok(dict
        .monomials()
        .ok_or(KoopmanError::NotPolynomial)?
        .into_iter()
        .cloned()
        .collect())
}

/// Least-squares solution of `expansion_j = sum_k a_jk phi_k` in the monomial basis.
///
/// The incidence matrix has one unit column per observable, so the solution
/// reads coefficients off directly; repeated observables share their
/// monomial's coefficient equally (the minimum-norm split).
fn match_coefficients(expansions: &[Polynomial], basis: &[Monomial]) -> SpanFit {
    let mut positions: BTreeMap<&Monomial, Vec<usize>> = BTreeMap::new();
    for (k, m) in basis.iter().enumerate() {
        positions.entry(m).or_default().push(k);
    }
    let linearly_dependent = positions.values().any(|v| v.len() > 1);
    if linearly_dependent {
        log::warn!("dictionary contains repeated observables; using minimum-norm A");
    }
    let mut a = DMatrix::zeros(expansions.len(), basis.len());
    let mut out_of_span = Vec::new();
    let mut residual = 0.0_f64;
    for (row, poly) in expansions.iter().enumerate() {
        for (m, c) in poly.terms() {
            match positions.get(m) {
                Some(cols) => {
                    let share = c / Coeff::from_integer((cols.len() as i64).into());
                    for &k in cols {
                        a[(row, k)] = coeff_to_f64(&share);
                    }
                }
                None => {
                    let coefficient = coeff_to_f64(c);
                    residual = residual.max(coefficient.abs());
                    out_of_span.push(OutOfSpanTerm {
                        row,
                        monomial: m.clone(),
                        coefficient,
                    });
                }
            }
        }
    }
    SpanFit {
        a,
        residual,
        out_of_span,
        linearly_dependent,
        symbolic: true,
    }
}

/// Lie derivative `(dphi/dx) field` of a monomial, symbolically.
fn lie_derivative(m: &Monomial, field: &PolynomialMap) -> Polynomial {
    let n = m.n_vars();
    let mut acc = Polynomial::zero(n);
    for (i, row) in field.rows().iter().enumerate() {
        if let Some((k, dm)) = m.derivative(i) {
            let factor = Polynomial::monomial(dm).scale(&Coeff::from_integer((k as i64).into()));
            acc = acc.add(&factor.mul(row));
        }
    }
    acc
}

/// Continuous time: expands `(dPhi/dx) f_c` and matches coefficients.
pub fn span_fit_ct(f_c: &PolynomialMap, dict: &ObservableDictionary) -> Result<SpanFit> {
    check_dim("autonomous dynamics arity", dict.n_x(), f_c.n_vars())?;
    check_dim("autonomous dynamics rows", dict.n_x(), f_c.n_out())?;
    let basis = dictionary_monomials(dict)?;
    let expansions: Vec<Polynomial> = basis.iter().map(|m| lie_derivative(m, f_c)).collect();
    Ok(match_coefficients(&expansions, &basis))
}

/// Discrete time: expands `Phi(f(x))` and matches coefficients.
pub fn span_fit_dt(f: &PolynomialMap, dict: &ObservableDictionary) -> Result<SpanFit> {
    check_dim("autonomous dynamics arity", dict.n_x(), f.n_vars())?;
    check_dim("autonomous dynamics rows", dict.n_x(), f.n_out())?;
    let basis = dictionary_monomials(dict)?;
    let expansions = basis
        .iter()
        .map(|m| Polynomial::monomial(m.clone()).compose(f.rows()))
        .collect::<Result<Vec<_>>>()?;
    Ok(match_coefficients(&expansions, &basis))
}

/// `A` for `dPhi/dt = A Phi` under `f_c`; fails when the residual exceeds `tolerance`.
pub fn compute_a_ct(
    f_c: &PolynomialMap,
    dict: &ObservableDictionary,
    tolerance: f64,
) -> Result<SpanFit> {
    span_fit_ct(f_c, dict)?.into_checked(tolerance)
}

/// `A` with `Phi(f(x)) = A Phi(x)`; fails when the residual exceeds `tolerance`.
pub fn compute_a_dt(
    f: &PolynomialMap,
    dict: &ObservableDictionary,
    tolerance: f64,
) -> Result<SpanFit> {
    span_fit_dt(f, dict)?.into_checked(tolerance)
}

/// Sampled least-squares `A` for non-polynomial dynamics or dictionaries.
///
/// Targets are `Phi(f(x))` in discrete time and `(dPhi/dx) f(x)` in
/// continuous time; the residual is the largest absolute misfit.
pub fn fit_a_sampled(
    decomposition: &Decomposition,
    dict: &ObservableDictionary,
    time_domain: TimeDomain,
    samples: &[DVector<f64>],
) -> Result<SpanFit> {
    if samples.is_empty() {
        return Err(KoopmanError::EmptyGrid);
    }
    let n_f = dict.len();
    let mut lifted = DMatrix::zeros(n_f, samples.len());
    let mut target = DMatrix::zeros(n_f, samples.len());
    for (k, x) in samples.iter().enumerate() {
        lifted.set_column(k, &dict.eval(x)?);
        let f = decomposition.autonomous(x)?;
        let t = match time_domain {
            TimeDomain::Discrete => dict.eval(&f)?,
            TimeDomain::Continuous => dict.jacobian(x)? * f,
        };
        target.set_column(k, &t);
    }
    let (p, rank) = pinv(&lifted);
    let a = &target * p;
    let residual = (&target - &a * &lifted).amax();
    Ok(SpanFit {
        a,
        residual,
        out_of_span: Vec::new(),
        linearly_dependent: rank < n_f,
        symbolic: false,
    })
}

/// `Bcal(x, u) = (dPhi/dx)(x) g_c(x, u)`.
pub fn input_term_ct(
    decomposition: &Decomposition,
    dict: &ObservableDictionary,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = decomposition.input_driven(x, u)?;
    Ok(dict.jacobian(x)? * g)
}

/// `Bcal(x, u) = (int_0^1 (dPhi/dx)(f(x) + s g(x, u)) ds) g(x, u)`.
///
/// When `domain` is given, quadrature points outside it are reported with a
/// warning; the computation still proceeds.
pub fn input_term_dt(
    decomposition: &Decomposition,
    dict: &ObservableDictionary,
    x: &DVector<f64>,
    u: &DVector<f64>,
    quad: &GaussLegendre,
    domain: Option<&DomainBox>,
) -> Result<DVector<f64>> {
    let g = decomposition.input_driven(x, u)?;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(dict.len()));
    }
    let f = decomposition.autonomous(x)?;
    let mut warned = false;
    let mean_jacobian = quad.integrate_matrix(|s| {
        let point = &f + &g * s;
        if let Some(b) = domain {
            if !warned && !b.contains(point.as_slice()) {
                warned = true;
                log::warn!("segment f(x) + s g(x, u) leaves the state domain at s = {s}");
            }
        }
        dict.jacobian(&point)
    })?;
    Ok(mean_jacobian * g)
}

/// `B(x, u) = int_0^1 dBcal/du(x, s u) ds`, so that `Bcal(x, u) = B(x, u) u`.
///
/// Uses `u_jacobian` when supplied, central differences of `input_term`
/// otherwise. At `u = 0` every node evaluates `dBcal/du(x, 0)`.
pub fn factorize_input<T, J>(
    input_term: T,
    u_jacobian: Option<J>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    quad: &GaussLegendre,
) -> Result<DMatrix<f64>>
where
    T: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>>,
{
    match u_jacobian {
        Some(jac) => quad.integrate_matrix(|s| jac(x, &(u * s))),
        None => quad.integrate_matrix(|s| {
            let at = u * s;
            let failure = RefCell::new(None);
            let j = fd_jacobian(
                |v| match input_term(x, v) {
                    Ok(val) => val,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        DVector::zeros(0)
                    }
                },
                &at,
            );
            match failure.into_inner() {
                Some(e) => Err(e),
                None => Ok(j),
            }
        }),
    }
}

/// Exact lifted model of a nonlinear system with inputs.
#[derive(Clone, Debug)]
pub struct LiftedModel {
    a: DMatrix<f64>,
    residual: f64,
    exact: bool,
    time_domain: TimeDomain,
    dictionary: ObservableDictionary,
    decomposition: Decomposition,
    quadrature: GaussLegendre,
    domain: Option<DomainBox>,
    /// Symbolic `g_i` when the dynamics are `f(x) + sum_i g_i(x) u_i`.
    input_columns: Option<Vec<PolynomialMap>>,
}

impl LiftedModel {
    pub fn new(
        decomposition: Decomposition,
        dictionary: ObservableDictionary,
        time_domain: TimeDomain,
        fit: SpanFit,
        quadrature: GaussLegendre,
        span_tolerance: f64,
    ) -> Result<Self> {
        check_dim("dictionary state dimension", decomposition.n_x(), dictionary.n_x())?;
        check_dim("A rows", dictionary.len(), fit.a.nrows())?;
        check_dim("A columns", dictionary.len(), fit.a.ncols())?;
        Ok(Self {
            exact: fit.symbolic && fit.residual <= span_tolerance,
            a: fit.a,
            residual: fit.residual,
            time_domain,
            dictionary,
            decomposition,
            quadrature,
            domain: None,
            input_columns: None,
        })
    }

    /// Symbolic lifting of a system with a polynomial autonomous part.
    pub fn from_system(system: &System, quadrature: GaussLegendre, span_tolerance: f64) -> Result<Self> {
        Self::from_system_with_dictionary(system, system.dictionary.clone(), quadrature, span_tolerance)
    }

    pub fn from_system_with_dictionary(
        system: &System,
        dictionary: ObservableDictionary,
        quadrature: GaussLegendre,
        span_tolerance: f64,
    ) -> Result<Self> {
        let autonomous = system.autonomous.as_ref().ok_or(KoopmanError::NotPolynomial)?;
        let fit = match system.time_domain() {
            TimeDomain::Continuous => compute_a_ct(autonomous, &dictionary, span_tolerance)?,
            TimeDomain::Discrete => compute_a_dt(autonomous, &dictionary, span_tolerance)?,
        };
        let model = Self::new(
            decompose(&system.dynamics)?,
            dictionary,
            system.time_domain(),
            fit,
            quadrature,
            span_tolerance,
        )?;
        match &system.input_columns {
            Some(cols) => model.with_input_columns(cols.clone()),
            None => Ok(model),
        }
    }

    /// Declares the dynamics control affine with these symbolic input columns.
    ///
    /// `df_d/du = G(x)` then no longer depends on `u`, which [`Self::factored_input`]
    /// exploits. The columns must agree with the dynamics oracle.
    pub fn with_input_columns(mut self, columns: Vec<PolynomialMap>) -> Result<Self> {
        check_dim("input columns", self.n_u(), columns.len())?;
        for g in &columns {
            check_dim("input column arity", self.decomposition.n_x(), g.n_vars())?;
            check_dim("input column rows", self.decomposition.n_x(), g.n_out())?;
        }
        self.input_columns = Some(columns);
        Ok(self)
    }

    /// `G(x) = [g_1(x) ... g_nu(x)]`.
    fn input_columns_at(&self, cols: &[PolynomialMap], x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut g = DMatrix::zeros(self.decomposition.n_x(), cols.len());
        for (i, col) in cols.iter().enumerate() {
            g.set_column(i, &col.eval(x.as_slice())?);
        }
        Ok(g)
    }

    /// `B` for control-affine dynamics: `(dPhi/dx)(x) G(x)` in continuous time,
    /// `int_0^1 (dPhi/dx)(f(x) + s G(x) u) ds G(x)` in discrete time.
    fn factored_input_affine(
        &self,
        cols: &[PolynomialMap],
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let g = self.input_columns_at(cols, x)?;
        if self.time_domain == TimeDomain::Continuous {
            return Ok(self.dictionary.jacobian(x)? * g);
        }
        let f = self.decomposition.autonomous(x)?;
        let gu = &g * u;
        let mut acc = DMatrix::zeros(self.n_f(), self.n_u());
        let mut jac = DMatrix::zeros(self.n_f(), f.len());
        let mut jg = DMatrix::zeros(self.n_f(), self.n_u());
        let mut point = f.clone();
        for (&s, &w) in self.quadrature.nodes().iter().zip(self.quadrature.weights()) {
            point.zip_zip_apply(&f, &gu, |p, fi, gi| *p = fi + gi * s);
            self.dictionary.jacobian_into(point.as_slice(), &mut jac)?;
            jg.gemm(1.0, &jac, &g, 0.0);
            acc.zip_apply(&jg, |a, v| *a += v * w);
        }
        Ok(acc)
    }

    /// Domain used for the segment warning of the discrete input term.
    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn time_domain(&self) -> TimeDomain {
        self.time_domain
    }

    pub fn dictionary(&self) -> &ObservableDictionary {
        &self.dictionary
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn quadrature(&self) -> &GaussLegendre {
        &self.quadrature
    }

    pub fn n_f(&self) -> usize {
        self.dictionary.len()
    }

    pub fn n_u(&self) -> usize {
        self.decomposition.n_u()
    }

    /// The unfactored input term `Bcal(x, u)`.
    pub fn input_term(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self.time_domain {
            TimeDomain::Continuous => input_term_ct(&self.decomposition, &self.dictionary, x, u),
            TimeDomain::Discrete => input_term_dt(
                &self.decomposition,
                &self.dictionary,
                x,
                u,
                &self.quadrature,
                self.domain.as_ref(),
            ),
        }
    }

    /// `dBcal/du`, composed analytically.
    ///
    /// Continuous time: `(dPhi/dx)(x) dg/du(x, u)`. Discrete time, since
    /// `Bcal(x, u) = Phi(f_d(x, u)) - Phi(f(x))`: `(dPhi/dx)(f_d(x, u)) df_d/du(x, u)`.
    pub fn input_term_u_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let dg = self.decomposition.input_driven_jacobian(x, u)?;
        let at = match self.time_domain {
            TimeDomain::Continuous => x.clone(),
            TimeDomain::Discrete => self.decomposition.dynamics().eval(x, u)?,
        };
        Ok(self.dictionary.jacobian(&at)? * dg)
    }

    /// `B(x, u)` with `Bcal(x, u) = B(x, u) u`.
    pub fn factored_input(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("state", self.decomposition.n_x(), x.len())?;
        check_dim("input", self.n_u(), u.len())?;
        if let Some(cols) = &self.input_columns {
            return self.factored_input_affine(cols, x, u);
        }
        if self.time_domain == TimeDomain::Continuous {
            // The dictionary Jacobian does not depend on the ray parameter.
            let mean_dg = self
                .quadrature
                .integrate_matrix(|s| self.decomposition.input_driven_jacobian(x, &(u * s)))?;
            return Ok(self.dictionary.jacobian(x)? * mean_dg);
        }
        factorize_input(
            |x, u| self.input_term(x, u),
            Some(|x: &DVector<f64>, u: &DVector<f64>| self.input_term_u_jacobian(x, u)),
            x,
            u,
            &self.quadrature,
        )
    }

    /// `A Phi(x) + Bcal(x, u)`.
    pub fn lifted_rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * self.dictionary.eval(x)? + self.input_term(x, u)?)
    }
}

/// `dPhi/dt = A Phi + sum_i B_i Phi u_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearModel {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
}

impl BilinearModel {
    pub fn new(a: DMatrix<f64>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        for bi in &b {
            check_dim("bilinear matrix rows", a.nrows(), bi.nrows())?;
            check_dim("bilinear matrix columns", a.ncols(), bi.ncols())?;
        }
        Ok(Self { a, b })
    }

    pub fn n_u(&self) -> usize {
        self.b.len()
    }

    /// `B~_j = [B_{1,j} ... B_{nu,j}]`: the `j`-th columns of every `B_i`.
    pub fn b_tilde(&self, j: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.a.nrows(), self.b.len());
        for (i, bi) in self.b.iter().enumerate() {
            m.set_column(i, &bi.column(j));
        }
        m
    }

    /// `sum_i B_i z u_i`.
    pub fn input_term(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input", self.b.len(), u.len())?;
        let mut acc = DVector::zeros(self.a.nrows());
        for (bi, &ui) in self.b.iter().zip(u.iter()) {
            acc += bi * z * ui;
        }
        Ok(acc)
    }

    /// Same sum through the column-gathered form `sum_j z_j B~_j u`.
    pub fn input_term_gathered(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input", self.b.len(), u.len())?;
        let mut acc = DVector::zeros(self.a.nrows());
        for j in 0..z.len() {
            acc += self.b_tilde(j) * u * z[j];
        }
        Ok(acc)
    }
}

/// Per-channel `B_i` with `(dPhi/dx) g_i = B_i Phi` for polynomial input columns.
pub fn extract_bilinear(
    input_columns: &[PolynomialMap],
    dict: &ObservableDictionary,
    tolerance: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let basis = dictionary_monomials(dict)?;
    let mut result = Vec::with_capacity(input_columns.len());
    let mut offending = Vec::new();
    let mut worst = 0.0_f64;
    for (channel, g) in input_columns.iter().enumerate() {
        check_dim("input column arity", dict.n_x(), g.n_vars())?;
        check_dim("input column rows", dict.n_x(), g.n_out())?;
        let expansions: Vec<Polynomial> = basis.iter().map(|m| lie_derivative(m, g)).collect();
        let fit = match_coefficients(&expansions, &basis);
        if fit.residual > tolerance {
            worst = worst.max(fit.residual);
            offending.extend(fit.out_of_span.iter().map(|t| {
                format!(
                    "channel {} row {}: {:e}*{}",
                    channel + 1,
                    t.row,
                    t.coefficient,
                    t.monomial
                )
            }));
        }
        result.push(fit.a);
    }
    if !offending.is_empty() {
        return Err(KoopmanError::InvariantSubspaceViolation {
            residual: worst,
            offending,
        });
    }
    Ok(result)
}
