//! LPV recast `z+ = A z + B_z(p) u`, `p = mu(z, u)`, and constant-input LTI approximations.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, KoopmanError, Result};
use crate::lifting::LiftedModel;
use crate::systems::TimeDomain;

/// `p -> B_z(p)`.
pub type SchedulingInputFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;
/// `(z, u) -> p`.
pub type SchedulingFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulingKind {
    /// `p = [z; u]`.
    StackZu,
    /// `p = z`; valid when `B` does not depend on `u`.
    StackZ,
    Custom,
}

impl fmt::Display for SchedulingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulingKind::StackZu => "stack-zu",
            SchedulingKind::StackZ => "stack-z",
            SchedulingKind::Custom => "custom",
        })
    }
}

/// The scheduling map `mu` with its output dimension.
#[derive(Clone)]
pub struct SchedulingMap {
    kind: SchedulingKind,
    dim: usize,
    map: SchedulingFn,
}

impl fmt::Debug for SchedulingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SchedulingMap")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .finish()
    }
}

impl SchedulingMap {
    pub fn stack_zu(n_f: usize, n_u: usize) -> Self {
        Self {
            kind: SchedulingKind::StackZu,
            dim: n_f + n_u,
            map: Arc::new(|z, u| {
                DVector::from_iterator(z.len() + u.len(), z.iter().chain(u.iter()).copied())
            }),
        }
    }

    pub fn stack_z(n_f: usize) -> Self {
        Self {
            kind: SchedulingKind::StackZ,
            dim: n_f,
            map: Arc::new(|z, _u| z.clone()),
        }
    }

    pub fn custom<F>(dim: usize, map: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            kind: SchedulingKind::Custom,
            dim,
            map: Arc::new(map),
        }
    }

    pub fn kind(&self) -> SchedulingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let p = (self.map)(z, u);
        check_dim("scheduling vector", self.dim, p.len())?;
        Ok(p)
    }
}

/// `dz/dt` or `z+` equal to `A z + B_z(mu(z, u)) u`, with output `x = C z`.
#[derive(Clone)]
pub struct LpvKoopmanModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    n_u: usize,
    b_z: SchedulingInputFn,
    scheduling: SchedulingMap,
    time_domain: TimeDomain,
}

impl fmt::Debug for LpvKoopmanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LpvKoopmanModel")
            .field("a", &self.a)
            .field("c", &self.c)
            .field("n_u", &self.n_u)
            .field("scheduling", &self.scheduling)
            .field("time_domain", &self.time_domain)
            .finish()
    }
}

/// LPV model with `p = [z; u]`.
pub fn make_lpv(lifted: &LiftedModel) -> Result<LpvKoopmanModel> {
    make_lpv_with(
        lifted,
        SchedulingMap::stack_zu(lifted.n_f(), lifted.n_u()),
    )
}

/// LPV model with `B_z(p) = B(C z, u)`, reading `z` and `u` back out of `p`.
///
/// Supported maps are `stack-zu` and `stack-z`; the latter evaluates `B` at
/// `u = 0` and is exact only when `B` is input independent (continuous-time
/// control-affine systems). Arbitrary maps go through [`LpvKoopmanModel::new`].
pub fn make_lpv_with(lifted: &LiftedModel, scheduling: SchedulingMap) -> Result<LpvKoopmanModel> {
    let dict = lifted.dictionary();
    let c = dict.output_matrix()?;
    let (n_f, n_u) = (lifted.n_f(), lifted.n_u());
    let model = lifted.clone();
    let b_z: SchedulingInputFn = match scheduling.kind() {
        SchedulingKind::StackZu => Arc::new(move |p: &DVector<f64>| {
            check_dim("scheduling vector", n_f + n_u, p.len())?;
            let z = p.rows(0, n_f).into_owned();
            let u = p.rows(n_f, n_u).into_owned();
            let x = model.dictionary().recover_state(&z)?;
            model.factored_input(&x, &u)
        }),
        SchedulingKind::StackZ => Arc::new(move |p: &DVector<f64>| {
            check_dim("scheduling vector", n_f, p.len())?;
            let x = model.dictionary().recover_state(p)?;
            model.factored_input(&x, &DVector::zeros(n_u))
        }),
        SchedulingKind::Custom => {
            return Err(KoopmanError::InvalidArgument(
                "custom scheduling maps need an explicit B_z".into(),
            ))
        }
    };
    LpvKoopmanModel::new(lifted.a().clone(), c, n_u, b_z, scheduling, lifted.time_domain())
}

impl LpvKoopmanModel {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        n_u: usize,
        b_z: SchedulingInputFn,
        scheduling: SchedulingMap,
        time_domain: TimeDomain,
    ) -> Result<Self> {
        check_dim("A columns", a.nrows(), a.ncols())?;
        check_dim("C columns", a.nrows(), c.ncols())?;
        Ok(Self {
            a,
            c,
            n_u,
            b_z,
            scheduling,
            time_domain,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn n_f(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn scheduling(&self) -> &SchedulingMap {
        &self.scheduling
    }

    pub fn time_domain(&self) -> TimeDomain {
        self.time_domain
    }

    pub fn b_z(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let b = (self.b_z)(p)?;
        check_dim("B_z rows", self.n_f(), b.nrows())?;
        check_dim("B_z columns", self.n_u, b.ncols())?;
        Ok(b)
    }

    /// `B_z(mu(z, u))`.
    pub fn input_matrix(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.b_z(&self.scheduling.eval(z, u)?)
    }

    /// `A z + B_z(mu(z, u)) u`: the vector field in continuous time, the successor in discrete time.
    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        eval_lpv_step(self, z, u)
    }

    pub fn output(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c * z
    }
}

pub fn eval_lpv_step(
    m: &LpvKoopmanModel,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("lifted state", m.n_f(), z.len())?;
    check_dim("input", m.n_u, u.len())?;
    let next = &m.a * z + m.input_matrix(z, u)? * u;
    check_finite("LPV step", next.as_slice())?;
    Ok(next)
}

/// `z+ = A z + B_hat u`, `x = C z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtiKoopmanModel {
    pub a: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn make_lti(a: DMatrix<f64>, b_hat: DMatrix<f64>, c: DMatrix<f64>) -> Result<LtiKoopmanModel> {
    check_dim("A columns", a.nrows(), a.ncols())?;
    check_dim("B_hat rows", a.nrows(), b_hat.nrows())?;
    check_dim("C columns", a.nrows(), c.ncols())?;
    Ok(LtiKoopmanModel { a, b_hat, c })
}

impl LtiKoopmanModel {
    pub fn n_f(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_hat.ncols()
    }

    pub fn step(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("lifted state", self.n_f(), z.len())?;
        check_dim("input", self.n_u(), u.len())?;
        Ok(&self.a * z + &self.b_hat * u)
    }

    pub fn output(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;
    use crate::systems::{ct_example, dt_example, PolynomialMap, System, ObservableDictionary};

    fn lifted(sys: &System) -> LiftedModel {
        LiftedModel::from_system(sys, GaussLegendre::default(), 1e-9).unwrap()
    }

    #[test]
    fn dt_example_shapes() {
        let m = make_lpv(&lifted(&dt_example())).unwrap();
        assert_eq!(m.scheduling().dim(), 4);
        assert_eq!(m.scheduling().kind(), SchedulingKind::StackZu);
        assert_eq!(
            m.c(),
            &DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
        );
        let z = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let next = m.step(&z, &DVector::zeros(1)).unwrap();
        assert_eq!(next.as_slice(), &[0.7, 0.7 - 0.5, 0.49]);
    }

    #[test]
    fn ct_example_shapes() {
        let m = make_lpv(&lifted(&ct_example())).unwrap();
        assert_eq!(m.scheduling().dim(), 5);
        assert_eq!(m.c().shape(), (2, 3));
        let z = DVector::from_vec(vec![0.5, -0.25, 0.25]);
        assert_eq!(m.step(&z, &DVector::zeros(2)).unwrap(), m.a() * &z);
    }

    #[test]
    fn dt_step_matches_nonlinear_successor() {
        let sys = dt_example();
        let m = make_lpv(&lifted(&sys)).unwrap();
        for (x1, x2, u) in [(0.3, -0.4, 0.8), (-1.7, 0.2, -0.35), (1.0, 1.0, 0.5)] {
            let x = DVector::from_vec(vec![x1, x2]);
            let uv = DVector::from_vec(vec![u]);
            let z = sys.dictionary.eval(&x).unwrap();
            let next = m.step(&z, &uv).unwrap();
            let oracle = sys.dictionary.eval(&sys.dynamics.eval(&x, &uv).unwrap()).unwrap();
            assert!((next - oracle).amax() < 1e-12);
        }
        let z = sys.dictionary.eval(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(m.step(&z, &DVector::from_vec(vec![0.5])).unwrap()[0], 1.2);
    }

    #[test]
    fn autonomous_system_has_zero_input_matrix() {
        let f = PolynomialMap::parse_rows(2, &["0.5*x1", "0.2*x2 + x1^2"]).unwrap();
        let g = PolynomialMap::zero(2, 2);
        let dict = ObservableDictionary::parse(2, "x1,x2,x1^2").unwrap();
        let sys = System::polynomial(
            "aut",
            TimeDomain::Discrete,
            f,
            vec![g],
            dict,
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let m = make_lpv(&lifted(&sys)).unwrap();
        let z = DVector::from_vec(vec![0.3, 0.1, 0.09]);
        let u = DVector::from_vec(vec![2.0]);
        assert_eq!(m.input_matrix(&z, &u).unwrap(), DMatrix::zeros(3, 1));
        assert_eq!(m.step(&z, &u).unwrap(), m.a() * &z);
    }

    #[test]
    fn stack_z_for_input_independent_b() {
        let f = PolynomialMap::parse_rows(2, &["-x1", "-2*x2 + x1^2"]).unwrap();
        let g = PolynomialMap::parse_rows(2, &["1", "x1"]).unwrap();
        let dict = ObservableDictionary::parse(2, "x1,x2,x1^2,1").unwrap();
        let sys = System::polynomial(
            "affine",
            TimeDomain::Continuous,
            f,
            vec![g],
            dict,
            DVector::from_vec(vec![0.0, 0.0]),
        );
        // `1` has zero derivative, so A closes; B = [1; x1; 2 x1; 0].
        let l = LiftedModel::from_system(&sys.unwrap(), GaussLegendre::default(), 1e-9).unwrap();
        let full = make_lpv(&l).unwrap();
        let reduced = make_lpv_with(&l, SchedulingMap::stack_z(4)).unwrap();
        let z = DVector::from_vec(vec![0.5, 0.1, 0.25, 1.0]);
        let u = DVector::from_vec(vec![3.0]);
        assert_eq!(reduced.scheduling().dim(), 4);
        assert_eq!(full.input_matrix(&z, &u).unwrap(), reduced.input_matrix(&z, &u).unwrap());
        assert_eq!(
            reduced.input_matrix(&z, &u).unwrap().as_slice(),
            &[1.0, 0.5, 1.0, 0.0]
        );
    }

    #[test]
    fn missing_selector_is_an_error() {
        let sys = dt_example();
        let dict = ObservableDictionary::parse(2, "x1^2,x2^2").unwrap();
        let l = LiftedModel::from_system_with_dictionary(&sys, dict, GaussLegendre::default(), 1e20);
        match l {
            Ok(l) => assert!(matches!(make_lpv(&l), Err(KoopmanError::MissingStateSelector))),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn lti_packaging() {
        let a = DMatrix::identity(3, 3);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(make_lti(a.clone(), DMatrix::zeros(2, 1), c.clone()).is_err());
        let m = make_lti(a, DMatrix::zeros(3, 1), c).unwrap();
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(m.step(&z, &DVector::from_vec(vec![4.0])).unwrap(), z);
        assert_eq!(m.output(&z).as_slice(), &[1.0, 2.0]);
    }
}
