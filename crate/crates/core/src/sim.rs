//! Fixed-step simulation, excitation signals and trajectory error metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, KoopmanError, Result};
use crate::lifting::LiftedModel;
use crate::lpv::{LpvKoopmanModel, LtiKoopmanModel};
use crate::systems::{DynamicsOracle, ObservableDictionary, TimeDomain};

/// Sampled states and held inputs, one row per time instant including `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub label: String,
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(
        label: impl Into<String>,
        times: Vec<f64>,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
    ) -> Result<Self> {
        check_dim("trajectory state rows", times.len(), states.nrows())?;
        check_dim("trajectory input rows", times.len(), inputs.nrows())?;
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(KoopmanError::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            times,
            states,
            inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_x(&self) -> usize {
        self.states.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn input(&self, k: usize) -> DVector<f64> {
        self.inputs.row(k).transpose()
    }

    /// Same trajectory with every state mapped through `output` (e.g. `x = C z`).
    pub fn mapped(&self, output: &DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        check_dim("output map columns", self.n_x(), output.ncols())?;
        Ok(Self {
            label: label.into(),
            times: self.times.clone(),
            states: &self.states * output.transpose(),
            inputs: self.inputs.clone(),
        })
    }
}

fn check_inputs(inputs: &DMatrix<f64>, n: usize) -> Result<()> {
    check_dim("input samples (N + 1)", n + 1, inputs.nrows())
}

fn diverged(label: &str, step: usize, x: &DVector<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KoopmanError::Divergence {
            label: label.to_string(),
            step,
        })
    }
}

/// Classical RK4 with step `ts` over `n` steps; input row `k` is held on `[t_k, t_k+1)`.
///
/// `inputs` needs `n + 1` rows; the last one is only recorded.
pub fn rk4_integrate<F>(
    label: &str,
    field: F,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(KoopmanError::InvalidArgument(format!("step size must be positive, got {ts}")));
    }
    check_inputs(inputs, n)?;
    let mut states = DMatrix::zeros(n + 1, x0.len());
    states.set_row(0, &x0.transpose());
    let mut x = x0.clone();
    let half = 0.5 * ts;
    let stage = |step: usize, r: Result<DVector<f64>>| -> Result<DVector<f64>> {
        match r {
            Err(KoopmanError::Domain { .. }) | Err(KoopmanError::NonFinite { .. }) => {
                Err(KoopmanError::Divergence {
                    label: label.to_string(),
                    step,
                })
            }
            other => other,
        }
    };
    for k in 0..n {
        let t = k as f64 * ts;
        let u = inputs.row(k).transpose();
        let k1 = stage(k + 1, field(t, &x, &u))?;
        let k2 = stage(k + 1, field(t + half, &(&x + &k1 * half), &u))?;
        let k3 = stage(k + 1, field(t + half, &(&x + &k2 * half), &u))?;
        let k4 = stage(k + 1, field(t + ts, &(&x + &k3 * ts), &u))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
        diverged(label, k + 1, &x)?;
        states.set_row(k + 1, &x.transpose());
    }
    let times = (0..=n).map(|k| k as f64 * ts).collect();
    Trajectory::new(label, times, states, inputs.clone())
}

/// Iterates `x_{k+1} = step(k, x_k, u_k)` for `n` steps.
pub fn dt_simulate<F>(
    label: &str,
    step: F,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    n: usize,
) -> Result<Trajectory>
where
    F: Fn(usize, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    check_inputs(inputs, n)?;
    let mut states = DMatrix::zeros(n + 1, x0.len());
    states.set_row(0, &x0.transpose());
    let mut x = x0.clone();
    for k in 0..n {
        x = match step(k, &x, &inputs.row(k).transpose()) {
            Ok(next) => next,
            Err(KoopmanError::Domain { .. }) | Err(KoopmanError::NonFinite { .. }) => {
                return Err(KoopmanError::Divergence {
                    label: label.to_string(),
                    step: k + 1,
                })
            }
            Err(e) => return Err(e),
        };
        diverged(label, k + 1, &x)?;
        states.set_row(k + 1, &x.transpose());
    }
    let times = (0..=n).map(|k| k as f64).collect();
    Trajectory::new(label, times, states, inputs.clone())
}

/// Runs a model forward in its own time domain (`ts` is ignored in discrete time).
fn run<F>(
    label: &str,
    time_domain: TimeDomain,
    rhs: F,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    match time_domain {
        TimeDomain::Continuous => rk4_integrate(label, |_, x, u| rhs(x, u), x0, inputs, ts, n),
        TimeDomain::Discrete => dt_simulate(label, |_, x, u| rhs(x, u), x0, inputs, n),
    }
}

pub fn simulate_nonlinear(
    label: &str,
    dynamics: &DynamicsOracle,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory> {
    run(label, dynamics.time_domain(), |x, u| dynamics.eval(x, u), x0, inputs, ts, n)
}

/// Simulates the LPV model from `z0`; states are lifted coordinates.
pub fn simulate_lpv(
    label: &str,
    model: &LpvKoopmanModel,
    z0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory> {
    run(label, model.time_domain(), |z, u| model.step(z, u), z0, inputs, ts, n)
}

pub fn simulate_lti(
    label: &str,
    model: &LtiKoopmanModel,
    time_domain: TimeDomain,
    z0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory> {
    run(label, time_domain, |z, u| model.step(z, u), z0, inputs, ts, n)
}

/// Simulates `A Phi(x) + Bcal(x, u)` directly in lifted coordinates, recovering `x` from `z`.
pub fn simulate_lifted(
    label: &str,
    model: &LiftedModel,
    z0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    ts: f64,
    n: usize,
) -> Result<Trajectory> {
    let dict: &ObservableDictionary = model.dictionary();
    run(
        label,
        model.time_domain(),
        |z, u| {
            let x = dict.recover_state(z)?;
            Ok(model.a() * z + model.input_term(&x, u)?)
        },
        z0,
        inputs,
        ts,
        n,
    )
}

/// Excitation of one input channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// I.i.d. `N(mean, variance)` samples.
    WhiteNoise {
        seed: u64,
        variance: f64,
        #[serde(default)]
        mean: f64,
    },
    /// `amplitude * sum_j sin(2 pi f_j t)` with equidistant `f_j` on `[f_low, f_high]`.
    Multisine {
        n_freq: usize,
        f_low: f64,
        f_high: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Zero,
    Custom { samples: Vec<f64> },
}

fn unit() -> f64 {
    1.0
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SignalSpec::WhiteNoise { variance, mean, .. } => {
                if !(*variance >= 0.0 && variance.is_finite() && mean.is_finite()) {
                    return Err(KoopmanError::InvalidArgument(format!(
                        "white noise needs finite mean and variance >= 0, got N({mean}, {variance})"
                    )));
                }
            }
            SignalSpec::Multisine {
                n_freq,
                f_low,
                f_high,
                amplitude,
            } => {
                if *n_freq == 0 {
                    return Err(KoopmanError::InvalidArgument("multisine needs n_freq >= 1".into()));
                }
                let ordered = if *n_freq == 1 { f_low <= f_high } else { f_low < f_high };
                if !ordered || !f_low.is_finite() || !f_high.is_finite() || !amplitude.is_finite() {
                    return Err(KoopmanError::InvalidArgument(format!(
                        "multisine band [{f_low}, {f_high}] with {n_freq} frequencies is invalid"
                    )));
                }
            }
            SignalSpec::Zero => {}
            SignalSpec::Custom { samples } => {
                crate::error::check_finite("custom signal", samples)?;
            }
        }
        Ok(())
    }

    /// `len` samples on the grid `t_k = k ts` (`ts = 1` gives cycles per sample).
    pub fn generate(&self, ts: f64, len: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match self {
            SignalSpec::WhiteNoise { seed, variance, mean } => {
                Ok(white_noise(*seed, *mean, *variance, len))
            }
            SignalSpec::Multisine {
                n_freq,
                f_low,
                f_high,
                amplitude,
            } => Ok(multisine(&multisine_frequencies(*n_freq, *f_low, *f_high), *amplitude, ts, len)),
            SignalSpec::Zero => Ok(vec![0.0; len]),
            SignalSpec::Custom { samples } => {
                if samples.len() < len {
                    return Err(KoopmanError::DimensionMismatch {
                        what: "custom signal samples".into(),
                        expected: len,
                        got: samples.len(),
                    });
                }
                Ok(samples[..len].to_vec())
            }
        }
    }
}

/// `n` equidistant frequencies including both endpoints.
pub fn multisine_frequencies(n: usize, f_low: f64, f_high: f64) -> Vec<f64> {
    if n == 1 {
        return vec![f_low];
    }
    (0..n)
        .map(|j| {
            if j + 1 == n {
                f_high
            } else {
                f_low + (f_high - f_low) * j as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Zero-phase sum of sinusoids sampled at `t_k = k ts`.
pub fn multisine(freqs: &[f64], amplitude: f64, ts: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let t = k as f64 * ts;
            amplitude
                * freqs
                    .iter()
                    .map(|f| (2.0 * std::f64::consts::PI * f * t).sin())
                    .sum::<f64>()
        })
        .collect()
}

/// Box-Muller Gaussian samples from a ChaCha20 stream seeded with `seed`.
pub fn white_noise(seed: u64, mean: f64, variance: f64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = variance.sqrt();
    let mut out = Vec::with_capacity(len + 1);
    while out.len() < len {
        // 1 - [0, 1) keeps the logarithm finite.
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(mean + sd * r * theta.cos());
        out.push(mean + sd * r * theta.sin());
    }
    out.truncate(len);
    out
}

/// One column per channel, `len` rows.
pub fn input_matrix(specs: &[SignalSpec], ts: f64, len: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(len, specs.len());
    for (j, spec) in specs.iter().enumerate() {
        m.set_column(j, &DVector::from_vec(spec.generate(ts, len)?));
    }
    Ok(m)
}

/// Norms of one state error component over the trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    /// 1-based state index.
    pub state_index: usize,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub states: Vec<StateError>,
}

impl ErrorReport {
    pub fn l2(&self, state_index: usize) -> f64 {
        self.states[state_index - 1].l2
    }

    pub fn linf(&self, state_index: usize) -> f64 {
        self.states[state_index - 1].linf
    }
}

/// Per-component `l2` and `linf` norms of `reference - output_map * test`.
///
/// With `output_map = None` the test states are compared as they are.
pub fn error_metrics(
    reference: &Trajectory,
    test: &Trajectory,
    output_map: Option<&DMatrix<f64>>,
) -> Result<ErrorReport> {
    if reference.times != test.times {
        return Err(KoopmanError::InvalidArgument(format!(
            "time grids of '{}' and '{}' differ",
            reference.label, test.label
        )));
    }
    let mapped = match output_map {
        Some(c) => &test.states * c.transpose(),
        None => test.states.clone(),
    };
    check_dim("compared state dimension", reference.n_x(), mapped.ncols())?;
    let diff = &reference.states - mapped;
    let states = diff
        .column_iter()
        .enumerate()
        .map(|(i, col)| StateError {
            state_index: i + 1,
            l2: col.norm(),
            linf: col.amax(),
        })
        .collect();
    Ok(ErrorReport { states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(ts: f64, n: usize) -> f64 {
        let inputs = DMatrix::zeros(n + 1, 0);
        let traj = rk4_integrate(
            "decay",
            |_, x, _| Ok(-x),
            &DVector::from_vec(vec![1.0]),
            &inputs,
            ts,
            n,
        )
        .unwrap();
        traj.states[(n, 0)]
    }

    #[test]
    fn rk4_single_step_exponential() {
        let x1 = decay(0.1, 1);
        assert!((x1 - 0.9048375).abs() < 1e-7);
        assert!((x1 - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_fourth_order() {
        let e1 = (decay(0.02, 50) - (-1.0f64).exp()).abs();
        let e2 = (decay(0.01, 100) - (-1.0f64).exp()).abs();
        let slope = (e1 / e2).log2();
        assert!((slope - 4.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn zero_field_is_constant() {
        let x0 = DVector::from_vec(vec![1.5, -2.0]);
        let traj = rk4_integrate("c", |_, x, _| Ok(x * 0.0), &x0, &DMatrix::zeros(11, 1), 0.3, 10).unwrap();
        for k in 0..=10 {
            assert_eq!(traj.state(k), x0);
        }
        assert_eq!(traj.times.len(), 11);
    }

    #[test]
    fn zoh_holds_input_across_stages() {
        // dx/dt = u: exact for piecewise-constant u.
        let inputs = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, -1.0, 7.0]);
        let traj = rk4_integrate("zoh", |_, _, u| Ok(u.clone()), &DVector::zeros(1), &inputs, 0.5, 3).unwrap();
        assert_eq!(traj.states.column(0).as_slice(), &[0.0, 0.5, 1.5, 1.0]);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let inputs = DMatrix::zeros(2001, 0);
        let err = dt_simulate("blow", |_, x, _| Ok(x * 1e300), &DVector::from_vec(vec![1.0]), &inputs, 2000)
            .unwrap_err();
        assert!(matches!(err, KoopmanError::Divergence { step: 2, .. }), "{err}");
    }

    #[test]
    fn dt_geometric_decay() {
        let sys = crate::systems::dt_example();
        let traj = simulate_nonlinear("dt", &sys.dynamics, &sys.x0, &DMatrix::zeros(21, 1), 1.0, 20).unwrap();
        let mut expected = 1.0;
        for k in 0..=20 {
            assert_eq!(traj.states[(k, 0)], expected);
            expected *= 0.7;
        }
    }

    #[test]
    fn multisine_grid_and_origin() {
        let f = multisine_frequencies(6, 0.1, 1.0);
        let expected = [0.1, 0.28, 0.46, 0.64, 0.82, 1.0];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(multisine_frequencies(1, 0.3, 0.3), vec![0.3]);
        let s = multisine(&f, 1.0, 1e-4, 5);
        assert_eq!(s[0], 0.0);
        let spec = SignalSpec::Multisine {
            n_freq: 2,
            f_low: 1.0,
            f_high: 1.0,
            amplitude: 1.0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn white_noise_is_deterministic_and_calibrated() {
        assert_eq!(white_noise(7, 0.0, 0.5, 1001), white_noise(7, 0.0, 0.5, 1001));
        assert_ne!(white_noise(7, 0.0, 0.5, 10), white_noise(8, 0.0, 0.5, 10));
        let n = 1_000_000;
        let variance = 0.1;
        let s = white_noise(42, 0.0, variance, n);
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * variance.sqrt() / (n as f64).sqrt(), "mean {mean}");
        assert!((var / variance - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn error_norms() {
        let times: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let a = Trajectory::new("a", times.clone(), DMatrix::from_element(9, 2, 1.0), DMatrix::zeros(9, 0)).unwrap();
        let b = Trajectory::new("b", times, DMatrix::from_element(9, 2, -2.0), DMatrix::zeros(9, 0)).unwrap();
        let same = error_metrics(&a, &a, None).unwrap();
        assert!(same.states.iter().all(|s| s.l2 == 0.0 && s.linf == 0.0));
        let r = error_metrics(&a, &b, None).unwrap();
        assert_eq!(r.l2(1), 9.0);
        assert_eq!(r.linf(2), 3.0);
        let c = Trajectory::new("c", vec![0.0, 1.0], DMatrix::zeros(2, 2), DMatrix::zeros(2, 0)).unwrap();
        assert!(error_metrics(&a, &c, None).is_err());
    }

    #[test]
    fn times_must_increase() {
        assert!(Trajectory::new("t", vec![0.0, 0.0], DMatrix::zeros(2, 1), DMatrix::zeros(2, 0)).is_err());
    }
}
