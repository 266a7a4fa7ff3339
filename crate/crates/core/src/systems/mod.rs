//! Nonlinear dynamics, their decomposition, and observable dictionaries.

mod builtins;
mod dictionary;
mod dynamics;
mod poly;

pub use builtins::{builtin, ct_example, dt_example, System};
pub use dictionary::{
    monomial_dictionary, CustomObservable, GradientFn, Observable, ObservableDictionary, ScalarFn,
};
pub use dynamics::{decompose, Decomposition, DomainBox, DynamicsOracle, MatrixFn, TimeDomain, VectorFn};
pub use poly::{coeff_from_f64, coeff_to_f64, parse_coeff, Coeff, Monomial, Polynomial, PolynomialMap};
