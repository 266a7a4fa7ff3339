//! Sparse multivariate polynomials with exact rational coefficients.
//!
//! Coefficients are kept as [`BigRational`] so that symbolic lifting
//! (composition, Lie derivatives, coefficient matching) is exact; a cached
//! `f64` copy of every coefficient is used for numeric evaluation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KoopmanError, Result};

pub type Coeff = BigRational;

/// Exact conversion of a double (every finite double is a dyadic rational).
pub fn coeff_from_f64(value: f64) -> Result<Coeff> {
    BigRational::from_float(value)
        .ok_or_else(|| KoopmanError::InvalidArgument(format!("non-finite coefficient {value}")))
}

/// Nearest double to an exact coefficient.
pub fn coeff_to_f64(c: &Coeff) -> f64 {
    c.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"-0.05"`, `"1.5e-3"`, `"7/10"` or `"3"` into an exact rational.
pub fn parse_coeff(text: &str) -> Result<Coeff> {
    let text = text.trim();
    if let Some((num, den)) = text.split_once('/') {
        let num = parse_decimal(num)?;
        let den = parse_decimal(den)?;
        if den.is_zero() {
            return Err(KoopmanError::Parse(format!("zero denominator in '{text}'")));
        }
        return Ok(num / den);
    }
    parse_decimal(text)
}

fn parse_decimal(text: &str) -> Result<Coeff> {
    let bad = || KoopmanError::Parse(format!("invalid number '{text}'"));
    let text = text.trim();
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut value = BigInt::parse_bytes(all_digits.as_bytes(), 10).ok_or_else(bad)?;
    if negative {
        value = -value;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let result = if scale >= 0 {
        BigRational::from_integer(value * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(value, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(result)
}

/// Product of powers `x_1^{e_1} ... x_n^{e_n}`.
///
/// Ordering is graded lexicographic with `x1 > x2 > ...`: lower total degree
/// first, and within a degree the larger power of the leading variable first,
/// so `x1 < x2 < x1^2 < x1*x2 < x2^2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn one(n_vars: usize) -> Self {
        Self::new(vec![0; n_vars])
    }

    /// The coordinate monomial `x_{var+1}`.
    pub fn var(n_vars: usize, var: usize) -> Self {
        let mut exponents = vec![0; n_vars];
        exponents[var] = 1;
        Self::new(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn n_vars(&self) -> usize {
        self.exponents.len()
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    /// Index of the coordinate if this monomial is exactly `x_i`.
    pub fn as_coordinate(&self) -> Option<usize> {
        if self.degree() != 1 {
            return None;
        }
        self.exponents.iter().position(|&e| e == 1)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }

    /// `d/dx_var` of the monomial evaluated at `x`, without building the derivative.
    pub fn partial_eval(&self, var: usize, x: &[f64]) -> f64 {
        let e = self.exponents[var];
        if e == 0 {
            return 0.0;
        }
        let product: f64 = self
            .exponents
            .iter()
            .zip(x)
            .enumerate()
            .map(|(k, (&ek, &xk))| if k == var { (ek - 1, xk) } else { (ek, xk) })
            .filter(|&(ek, _)| ek > 0)
            .map(|(ek, xk)| xk.powi(ek as i32))
            .product();
        e as f64 * product
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::new(
            self.exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// `d/dx_var` as `(multiplier, monomial)`, or `None` when it vanishes.
    pub fn derivative(&self, var: usize) -> Option<(u32, Monomial)> {
        let e = self.exponents[var];
        if e == 0 {
            return None;
        }
        let mut exponents = self.exponents.clone();
        exponents[var] -= 1;
        Some((e, Monomial::new(exponents)))
    }

    /// Parses `"1"`, `"x2"`, `"x1^2*x2"` (1-based variable names).
    pub fn parse(n_vars: usize, text: &str) -> Result<Self> {
        let text = text.trim();
        let mut exponents = vec![0u32; n_vars];
        if text == "1" {
            return Ok(Self::new(exponents));
        }
        for factor in text.split('*') {
            let (var, exp) = parse_power(factor.trim(), n_vars)?;
            exponents[var] += exp;
        }
        Ok(Self::new(exponents))
    }
}

fn parse_power(factor: &str, n_vars: usize) -> Result<(usize, u32)> {
    let bad = || KoopmanError::Parse(format!("invalid monomial factor '{factor}'"));
    let (base, exp) = match factor.split_once('^') {
        Some((b, e)) => (b.trim(), e.trim().parse::<u32>().map_err(|_| bad())?),
        None => (factor, 1),
    };
    let index: usize = base
        .strip_prefix('x')
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    if index == 0 || index > n_vars {
        return Err(KoopmanError::Parse(format!(
            "variable '{base}' out of range for {n_vars} states"
        )));
    }
    Ok((index - 1, exp))
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.exponents.iter().enumerate().filter(|(_, &e)| e > 0) {
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

/// Scalar polynomial; zero coefficients are never stored.
#[derive(Clone, Debug)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Monomial, Coeff>,
    numeric: Vec<(Monomial, f64)>,
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        self.n_vars == other.n_vars && self.terms == other.terms
    }
}

impl Polynomial {
    fn from_map(n_vars: usize, mut terms: BTreeMap<Monomial, Coeff>) -> Self {
        terms.retain(|_, c| !c.is_zero());
        let numeric = terms
            .iter()
            .map(|(m, c)| (m.clone(), coeff_to_f64(c)))
            .collect();
        Self {
            n_vars,
            terms,
            numeric,
        }
    }

    pub fn zero(n_vars: usize) -> Self {
        Self::from_map(n_vars, BTreeMap::new())
    }

    pub fn constant(n_vars: usize, c: Coeff) -> Self {
        Self::from_terms(n_vars, [(Monomial::one(n_vars), c)]).expect("constant has right arity")
    }

    pub fn var(n_vars: usize, var: usize) -> Self {
        Self::from_terms(n_vars, [(Monomial::var(n_vars, var), Coeff::one())])
            .expect("coordinate has right arity")
    }

    pub fn monomial(m: Monomial) -> Self {
        let n = m.n_vars();
        Self::from_terms(n, [(m, Coeff::one())]).expect("monomial has right arity")
    }

    /// Builds a polynomial, summing duplicate monomials and dropping zeros.
    pub fn from_terms<I>(n_vars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Monomial, Coeff)>,
    {
        let mut map: BTreeMap<Monomial, Coeff> = BTreeMap::new();
        for (m, c) in terms {
            check_dim("monomial exponents", n_vars, m.n_vars())?;
            *map.entry(m).or_insert_with(Coeff::zero) += c;
        }
        Ok(Self::from_map(n_vars, map))
    }

    /// Parses a sum of terms such as `"0.7*x2 - 1/2*x1^2 + 3"`.
    pub fn parse(n_vars: usize, text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(KoopmanError::Parse("empty polynomial".into()));
        }
        let mut rest = compact.as_str();
        while !rest.is_empty() {
            let (negative, body) = match rest.as_bytes()[0] {
                b'-' => (true, &rest[1..]),
                b'+' => (false, &rest[1..]),
                _ => (false, rest),
            };
            // A term ends at the next +/- that is not part of an exponent like 1e-3.
            let bytes = body.as_bytes();
            let mut end = body.len();
            for i in 1..bytes.len() {
                if (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
                    end = i;
                    break;
                }
            }
            let term = &body[..end];
            rest = &body[end..];
            let mut coeff = Coeff::one();
            let mut exponents = vec![0u32; n_vars];
            for factor in term.split('*') {
                if factor.starts_with('x') {
                    let (var, exp) = parse_power(factor, n_vars)?;
                    exponents[var] += exp;
                } else {
                    coeff *= parse_coeff(factor)?;
                }
            }
            if negative {
                coeff = -coeff;
            }
            terms.push((Monomial::new(exponents), coeff));
        }
        Self::from_terms(n_vars, terms)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, Coeff> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(Monomial::degree).max()
    }

    pub fn coefficient(&self, m: &Monomial) -> Coeff {
        self.terms.get(m).cloned().unwrap_or_else(Coeff::zero)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.numeric.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut map = self.terms.clone();
        for (m, c) in &other.terms {
            *map.entry(m.clone()).or_insert_with(Coeff::zero) += c;
        }
        Self::from_map(self.n_vars, map)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(&-Coeff::one()))
    }

    pub fn scale(&self, factor: &Coeff) -> Polynomial {
        Self::from_map(
            self.n_vars,
            self.terms
                .iter()
                .map(|(m, c)| (m.clone(), c * factor))
                .collect(),
        )
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut map: BTreeMap<Monomial, Coeff> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *map.entry(ma.mul(mb)).or_insert_with(Coeff::zero) += ca * cb;
            }
        }
        Self::from_map(self.n_vars, map)
    }

    pub fn pow(&self, exp: u32) -> Polynomial {
        let mut result = Self::constant(self.n_vars, Coeff::one());
        for _ in 0..exp {
            result = result.mul(self);
        }
        result
    }

    pub fn partial(&self, var: usize) -> Polynomial {
        let mut map: BTreeMap<Monomial, Coeff> = BTreeMap::new();
        for (m, c) in &self.terms {
            if let Some((k, dm)) = m.derivative(var) {
                *map.entry(dm).or_insert_with(Coeff::zero) += c * Coeff::from_integer(k.into());
            }
        }
        Self::from_map(self.n_vars, map)
    }

    /// Substitutes `x_i := inner[i]`; all inner polynomials share one arity.
    pub fn compose(&self, inner: &[Polynomial]) -> Result<Polynomial> {
        check_dim("composition arguments", self.n_vars, inner.len())?;
        let m = inner.first().map_or(0, Polynomial::n_vars);
        for q in inner {
            check_dim("inner polynomial arity", m, q.n_vars())?;
        }
        let mut powers: Vec<Vec<Polynomial>> = inner
            .iter()
            .map(|q| vec![Polynomial::constant(m, Coeff::one()), q.clone()])
            .collect();
        let mut result = Polynomial::zero(m);
        for (mono, c) in &self.terms {
            let mut term = Polynomial::constant(m, c.clone());
            for (i, &e) in mono.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e as usize {
                    let next = powers[i].last().unwrap().mul(&inner[i]);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][e as usize]);
            }
            result = result.add(&term);
        }
        Ok(result)
    }

    /// Largest absolute coefficient, as a double.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms
            .values()
            .map(|c| coeff_to_f64(&c.abs()))
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let sign = if c.is_negative() { "-" } else if i > 0 { "+" } else { "" };
            let sep = if i > 0 { " " } else { "" };
            let abs = c.abs();
            if m.is_constant() {
                write!(f, "{sep}{sign}{sep}{abs}")?;
            } else if abs.is_one() {
                write!(f, "{sep}{sign}{sep}{m}")?;
            } else {
                write!(f, "{sep}{sign}{sep}{abs}*{m}")?;
            }
        }
        Ok(())
    }
}

/// Vector-valued polynomial map `R^{n_vars} -> R^{n_out}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialMap {
    n_vars: usize,
    rows: Vec<Polynomial>,
}

impl PolynomialMap {
    pub fn new(n_vars: usize, rows: Vec<Polynomial>) -> Result<Self> {
        for row in &rows {
            check_dim("polynomial row arity", n_vars, row.n_vars())?;
        }
        Ok(Self { n_vars, rows })
    }

    pub fn zero(n_vars: usize, n_out: usize) -> Self {
        Self {
            n_vars,
            rows: vec![Polynomial::zero(n_vars); n_out],
        }
    }

    pub fn identity(n_vars: usize) -> Self {
        Self {
            n_vars,
            rows: (0..n_vars).map(|i| Polynomial::var(n_vars, i)).collect(),
        }
    }

    /// Builds `x -> F x` from a real matrix (entries converted exactly).
    pub fn linear(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.ncols();
        let mut rows = Vec::with_capacity(matrix.nrows());
        for i in 0..matrix.nrows() {
            let mut terms = Vec::new();
            for j in 0..n {
                terms.push((Monomial::var(n, j), coeff_from_f64(matrix[(i, j)])?));
            }
            rows.push(Polynomial::from_terms(n, terms)?);
        }
        Self::new(n, rows)
    }

    pub fn parse_rows(n_vars: usize, rows: &[&str]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| Polynomial::parse(n_vars, r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n_vars, rows)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_out(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Polynomial] {
        &self.rows
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim("polynomial argument", self.n_vars, x.len())?;
        Ok(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.eval(x)),
        ))
    }

    /// Symbolic Jacobian, flattened row-major: row `i * n_vars + j` is `d p_i / d x_j`.
    pub fn jacobian(&self) -> PolynomialMap {
        let rows = self
            .rows
            .iter()
            .flat_map(|p| (0..self.n_vars).map(move |j| p.partial(j)))
            .collect();
        PolynomialMap {
            n_vars: self.n_vars,
            rows,
        }
    }

    pub fn jacobian_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("polynomial argument", self.n_vars, x.len())?;
        let flat = self.jacobian();
        Ok(DMatrix::from_fn(self.n_out(), self.n_vars, |i, j| {
            flat.rows[i * self.n_vars + j].eval(x)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Coeff {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_coeff("0.7").unwrap(), q(7, 10));
        assert_eq!(parse_coeff("-0.05").unwrap(), q(-1, 20));
        assert_eq!(parse_coeff("1.5e-3").unwrap(), q(3, 2000));
        assert_eq!(parse_coeff("7/10").unwrap(), q(7, 10));
        assert_eq!(parse_coeff("2E2").unwrap(), q(200, 1));
        assert!(parse_coeff("abc").is_err());
        assert!(parse_coeff("1/0").is_err());
    }

    #[test]
    fn rational_to_double_rounds_to_nearest() {
        assert_eq!(coeff_to_f64(&q(49, 100)), 0.49);
        assert_eq!(coeff_to_f64(&q(-1, 10)), -0.1);
        assert_eq!(coeff_to_f64(&coeff_from_f64(0.7).unwrap()), 0.7);
    }

    #[test]
    fn graded_lex_order() {
        let mut ms: Vec<Monomial> = ["x2^2", "x1", "x1*x2", "x2", "x1^2", "1"]
            .iter()
            .map(|s| Monomial::parse(2, s).unwrap())
            .collect();
        ms.sort();
        let names: Vec<String> = ms.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]);
    }

    #[test]
    fn dt_example_evaluates() {
        let f = PolynomialMap::parse_rows(2, &["0.7*x1", "0.7*x2 - 0.5*x1^2"]).unwrap();
        let v = f.eval(&[1.0, 1.0]).unwrap();
        assert_eq!(v[0], 0.7);
        assert!((v[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_map_evaluates_to_zero() {
        let z = PolynomialMap::zero(3, 2);
        assert_eq!(z.eval(&[1.0, -2.0, 3.0]).unwrap(), DVector::zeros(2));
        assert!(z.eval(&[1.0]).is_err());
    }

    #[test]
    fn jacobian_of_square() {
        let phi = PolynomialMap::parse_rows(2, &["x1", "x2", "x1^2"]).unwrap();
        let j = phi.jacobian_at(&[3.0, -1.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 6.0, 0.0]));
        let c = PolynomialMap::parse_rows(2, &["5"]).unwrap();
        assert_eq!(c.jacobian_at(&[1.0, 2.0]).unwrap(), DMatrix::zeros(1, 2));
    }

    #[test]
    fn composition_expands() {
        // x1^2 composed with (x1 + x2) = x1^2 + 2 x1 x2 + x2^2
        let p = Polynomial::parse(1, "x1^2").unwrap();
        let inner = Polynomial::parse(2, "x1 + x2").unwrap();
        let c = p.compose(&[inner]).unwrap();
        assert_eq!(c, Polynomial::parse(2, "x1^2 + 2*x1*x2 + x2^2").unwrap());
    }

    #[test]
    fn zero_coefficients_dropped() {
        let p = Polynomial::parse(2, "x1 - x1 + 0*x2").unwrap();
        assert!(p.is_zero());
        assert_eq!(p.to_string(), "0");
    }

    #[test]
    fn parse_rejects_out_of_range_variable() {
        assert!(Polynomial::parse(2, "x3").is_err());
        assert!(Monomial::parse(2, "x0").is_err());
    }

    #[test]
    fn exponent_signs_do_not_split_terms() {
        let p = Polynomial::parse(1, "1e-3*x1 + 2").unwrap();
        assert_eq!(p.coefficient(&Monomial::var(1, 0)), q(1, 1000));
    }
}
