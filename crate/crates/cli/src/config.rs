//! Experiment configuration: a TOML file, flag overrides, and resolved defaults.

use std::path::Path;

use koopman_core::bounds::{DEFAULT_BOX_INFLATION, DEFAULT_GRID_DENSITY};
use koopman_core::lifting::DEFAULT_SPAN_TOLERANCE;
use koopman_core::quadrature::{GaussLegendre, DEFAULT_NODES};
use koopman_core::sim::SignalSpec;
use koopman_core::systems::{
    builtin, monomial_dictionary, ObservableDictionary, PolynomialMap, System, TimeDomain,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, CliResult};

pub const CT_TS: f64 = 1e-4;
pub const CT_HORIZON_SECONDS: f64 = 25.0;
pub const DT_HORIZON_STEPS: f64 = 100.0;
pub const CT_NOISE_VARIANCE: f64 = 0.1;
pub const DT_NOISE_VARIANCE: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<DictionaryConfig>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub lifting: LiftingConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

/// A built-in system by name, or an inline control-affine polynomial system.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_domain: Option<TimeDomain>,
    /// Rows of `f(x)`, e.g. `["0.7*x1", "0.7*x2 - 0.5*x1^2"]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autonomous: Option<Vec<String>>,
    /// One list of `n_x` rows per input channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_columns: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    /// Comma-separated monomials, e.g. `"x1,x2,x1^2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observables: Option<String>,
    /// All monomials up to this degree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default)]
    pub include_constant: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Step size in seconds (continuous time only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    /// Seconds in continuous time, steps in discrete time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// One signal per input channel.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signals: Vec<SignalSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftingConfig {
    #[serde(default = "default_tolerance")]
    pub span_tolerance: f64,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
}

fn default_tolerance() -> f64 {
    DEFAULT_SPAN_TOLERANCE
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

impl Default for LiftingConfig {
    fn default() -> Self {
        Self {
            span_tolerance: DEFAULT_SPAN_TOLERANCE,
            quadrature_nodes: DEFAULT_NODES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitConfig {
    /// `B_hat` by least squares with the exact `A`.
    Edmdc,
    EdmdFull,
    /// Fixed `alpha`, or a grid search when `alpha` is absent.
    EdmdTikhonov {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<Vec<f64>>,
    },
}

impl FitConfig {
    pub fn label(&self) -> String {
        match self {
            FitConfig::Edmdc => "edmdc".into(),
            FitConfig::EdmdFull => "edmd_full".into(),
            FitConfig::EdmdTikhonov { alpha: Some(a), .. } => format!("edmd_tikhonov_{a:e}"),
            FitConfig::EdmdTikhonov { alpha: None, .. } => "edmd_tikhonov".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_density")]
    pub grid_density: usize,
    /// `[lower, upper]` per state; defaults to the inflated trajectory envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_box: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_box: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "default_inflation")]
    pub inflation: f64,
}

fn default_density() -> usize {
    DEFAULT_GRID_DENSITY
}

fn default_inflation() -> f64 {
    DEFAULT_BOX_INFLATION
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            grid_density: DEFAULT_GRID_DENSITY,
            x_box: None,
            u_box: None,
            inflation: DEFAULT_BOX_INFLATION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub min_degree: u32,
    pub max_degree: u32,
    /// Also fit Tikhonov-regularized models with a grid search over `alpha`.
    #[serde(default = "yes")]
    pub tikhonov: bool,
}

fn yes() -> bool {
    true
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            min_degree: 2,
            max_degree: 20,
            tikhonov: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Fills every unset field with its default so the run is fully described.
    pub fn resolve(&self) -> CliResult<Experiment> {
        let system = self.build_system()?;
        let dictionary = match &self.dictionary {
            None => system.dictionary.clone(),
            Some(d) => build_dictionary(system.dynamics.n_x(), d)?,
        };
        let td = system.time_domain();
        let n_u = system.dynamics.n_u();
        let ts = match td {
            TimeDomain::Continuous => self.simulation.ts.unwrap_or(CT_TS),
            TimeDomain::Discrete => 1.0,
        };
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(config_err(format!("ts must be positive, got {ts}")));
        }
        if td == TimeDomain::Discrete && self.simulation.ts.is_some_and(|t| t != 1.0) {
            return Err(config_err("discrete-time systems run on integer steps; omit ts"));
        }
        let horizon = self.simulation.horizon.unwrap_or(match td {
            TimeDomain::Continuous => CT_HORIZON_SECONDS,
            TimeDomain::Discrete => DT_HORIZON_STEPS,
        });
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(config_err(format!("horizon must be positive, got {horizon}")));
        }
        let steps = (horizon / ts).round();
        if steps < 1.0 || (steps * ts - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(config_err(format!(
                "horizon {horizon} is not a whole number of steps of {ts}"
            )));
        }
        let signals = if self.simulation.signals.is_empty() {
            default_signals(td, n_u)
        } else {
            self.simulation.signals.clone()
        };
        if signals.len() != n_u {
            return Err(config_err(format!(
                "{} signals given for {n_u} input channels",
                signals.len()
            )));
        }
        for s in &signals {
            s.validate().map_err(|e| config_err(e.to_string()))?;
        }
        let quadrature = GaussLegendre::new(self.lifting.quadrature_nodes)
            .map_err(|e| config_err(e.to_string()))?;
        if let Some(b) = &self.bounds {
            if b.grid_density == 0 {
                return Err(config_err("bounds.grid_density must be >= 1"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.min_degree < 1 || s.min_degree > s.max_degree {
                return Err(config_err(format!(
                    "sweep degrees [{}, {}] are invalid",
                    s.min_degree, s.max_degree
                )));
            }
        }
        let mut effective = self.clone();
        effective.simulation = SimulationConfig {
            ts: (td == TimeDomain::Continuous).then_some(ts),
            horizon: Some(horizon),
            signals: signals.clone(),
        };
        effective.dictionary = Some(DictionaryConfig {
            observables: Some(dictionary.describe().join(",")),
            degree: None,
            include_constant: false,
        });
        effective.system.time_domain = Some(td);
        effective.system.x0 = Some(system.x0.iter().copied().collect());
        Ok(Experiment {
            system,
            dictionary,
            ts,
            steps: steps as usize,
            signals,
            quadrature,
            span_tolerance: self.lifting.span_tolerance,
            fits: self.fits.clone(),
            bounds: self.bounds.clone(),
            sweep: self.sweep.clone(),
            effective,
        })
    }

    fn build_system(&self) -> CliResult<System> {
        let s = &self.system;
        let mut system = match (&s.builtin, &s.autonomous) {
            (Some(_), Some(_)) => {
                return Err(config_err("give either system.builtin or an inline system, not both"))
            }
            (Some(name), None) => {
                if s.input_columns.is_some() || s.time_domain.is_some() {
                    return Err(config_err(
                        "built-in systems fix their time domain and input columns",
                    ));
                }
                builtin(name).map_err(|e| config_err(e.to_string()))?
            }
            (None, Some(rows)) => {
                let n_x = rows.len();
                let row_refs: Vec<&str> = rows.iter().map(String::as_str).collect();
                let f = PolynomialMap::parse_rows(n_x, &row_refs).map_err(|e| config_err(e.to_string()))?;
                let columns = s
                    .input_columns
                    .as_ref()
                    .ok_or_else(|| config_err("inline systems need system.input_columns"))?
                    .iter()
                    .map(|col| {
                        let refs: Vec<&str> = col.iter().map(String::as_str).collect();
                        if refs.len() != n_x {
                            return Err(config_err(format!(
                                "input column has {} rows, expected {n_x}",
                                refs.len()
                            )));
                        }
                        PolynomialMap::parse_rows(n_x, &refs).map_err(|e| config_err(e.to_string()))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                let td = s
                    .time_domain
                    .ok_or_else(|| config_err("inline systems need system.time_domain"))?;
                let dictionary = monomial_dictionary(n_x, 1, false).map_err(|e| config_err(e.to_string()))?;
                System::polynomial("inline", td, f, columns, dictionary, DVector::from_element(n_x, 1.0))
                    .map_err(|e| config_err(e.to_string()))?
            }
            (None, None) => return Err(config_err("system.builtin or system.autonomous is required")),
        };
        if let Some(x0) = &s.x0 {
            if x0.len() != system.dynamics.n_x() {
                return Err(config_err(format!(
                    "x0 has {} entries, expected {}",
                    x0.len(),
                    system.dynamics.n_x()
                )));
            }
            system.x0 = DVector::from_vec(x0.clone());
        }
        Ok(system)
    }
}

fn build_dictionary(n_x: usize, d: &DictionaryConfig) -> CliResult<ObservableDictionary> {
    match (&d.observables, d.degree) {
        (Some(list), None) => {
            let mut text = list.clone();
            if d.include_constant {
                text.push_str(",1");
            }
            ObservableDictionary::parse(n_x, &text).map_err(|e| config_err(e.to_string()))
        }
        (None, Some(deg)) => {
            monomial_dictionary(n_x, deg, d.include_constant).map_err(|e| config_err(e.to_string()))
        }
        _ => Err(config_err("dictionary needs exactly one of observables or degree")),
    }
}

/// White noise on every channel: `N(0, 0.1)` in continuous time, `N(0, 0.5)` in discrete time.
pub fn default_signals(td: TimeDomain, n_u: usize) -> Vec<SignalSpec> {
    let variance = match td {
        TimeDomain::Continuous => CT_NOISE_VARIANCE,
        TimeDomain::Discrete => DT_NOISE_VARIANCE,
    };
    (0..n_u)
        .map(|i| SignalSpec::WhiteNoise {
            seed: 1 + i as u64,
            variance,
            mean: 0.0,
        })
        .collect()
}

/// A fully resolved experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub system: System,
    pub dictionary: ObservableDictionary,
    pub ts: f64,
    pub steps: usize,
    pub signals: Vec<SignalSpec>,
    pub quadrature: GaussLegendre,
    pub span_tolerance: f64,
    pub fits: Vec<FitConfig>,
    pub bounds: Option<BoundsConfig>,
    pub sweep: Option<SweepConfig>,
    /// The configuration with every default written out.
    pub effective: ExperimentConfig,
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub system: Option<String>,
    pub dict: Option<String>,
    pub degree: Option<u32>,
    pub ts: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    pub quadrature_nodes: Option<usize>,
    pub grid_density: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> CliResult<()> {
        if let Some(name) = &self.system {
            cfg.system = SystemConfig {
                builtin: Some(name.clone()),
                ..SystemConfig::default()
            };
        }
        match (&self.dict, self.degree) {
            (Some(_), Some(_)) => return Err(config_err("--dict and --degree are exclusive")),
            (Some(list), None) => {
                cfg.dictionary = Some(DictionaryConfig {
                    observables: Some(list.clone()),
                    degree: None,
                    include_constant: false,
                })
            }
            (None, Some(deg)) => {
                cfg.dictionary = Some(DictionaryConfig {
                    observables: None,
                    degree: Some(deg),
                    include_constant: false,
                })
            }
            (None, None) => {}
        }
        if let Some(ts) = self.ts {
            cfg.simulation.ts = Some(ts);
        }
        if let Some(h) = self.horizon {
            cfg.simulation.horizon = Some(h);
        }
        if let Some(seed) = self.seed {
            if cfg.simulation.signals.is_empty() {
                let n_u = cfg.resolve()?.system.dynamics.n_u();
                let td = cfg.resolve()?.system.time_domain();
                cfg.simulation.signals = default_signals(td, n_u);
            }
            for (i, s) in cfg.simulation.signals.iter_mut().enumerate() {
                if let SignalSpec::WhiteNoise { seed: sd, .. } = s {
                    *sd = seed + i as u64;
                }
            }
        }
        if let Some(n) = self.quadrature_nodes {
            cfg.lifting.quadrature_nodes = n;
        }
        if let Some(d) = self.grid_density {
            cfg.bounds.get_or_insert_with(BoundsConfig::default).grid_density = d;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_per_time_domain() {
        let mut cfg = ExperimentConfig::default();
        cfg.system.builtin = Some("ct-example".into());
        let e = cfg.resolve().unwrap();
        assert_eq!((e.ts, e.steps), (1e-4, 250_000));
        assert_eq!(e.signals, default_signals(TimeDomain::Continuous, 2));
        cfg.system.builtin = Some("dt-example".into());
        let e = cfg.resolve().unwrap();
        assert_eq!((e.ts, e.steps), (1.0, 100));
        assert_eq!(
            e.signals,
            vec![SignalSpec::WhiteNoise { seed: 1, variance: 0.5, mean: 0.0 }]
        );
        assert_eq!(e.effective.simulation.horizon, Some(100.0));
    }

    #[test]
    fn toml_round_trip_with_inline_system() {
        let text = r#"
            [system]
            time_domain = "discrete"
            autonomous = ["0.7*x1", "0.7*x2 - 0.5*x1^2"]
            input_columns = [["1", "x1^2"]]
            x0 = [1.0, 1.0]

            [dictionary]
            observables = "x1,x2,x1^2"

            [simulation]
            horizon = 50
            signals = [{ kind = "multisine", n_freq = 6, f_low = 0.01, f_high = 0.1, amplitude = 0.3 }]

            [[fits]]
            method = "edmdc"

            [[fits]]
            method = "edmd_tikhonov"
            alpha = 1e-3
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let e = cfg.resolve().unwrap();
        assert_eq!(e.steps, 50);
        assert_eq!(e.fits.len(), 2);
        assert_eq!(e.dictionary.len(), 3);
        let back = ExperimentConfig::from_toml(&e.effective.to_toml().unwrap()).unwrap();
        assert_eq!(back.resolve().unwrap().effective, e.effective);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "[system]\nbuiltin = \"nope\"",
            "[system]\nbuiltin = \"dt-example\"\n[simulation]\nhorizon = -1",
            "[system]\nbuiltin = \"ct-example\"\n[simulation]\nts = 0",
            "[system]\nbuiltin = \"dt-example\"\nunknown = 1",
            "[system]\nbuiltin = \"dt-example\"\n[dictionary]\ndegree = 2\nobservables = \"x1\"",
            "[system]\nbuiltin = \"dt-example\"\n[simulation]\nsignals = [{ kind = \"multisine\", n_freq = 0, f_low = 0.1, f_high = 0.2 }]",
        ] {
            let err = ExperimentConfig::from_toml(text).and_then(|c| c.resolve()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::default();
        Overrides {
            system: Some("dt-example".into()),
            degree: Some(3),
            seed: Some(40),
            horizon: Some(20.0),
            ..Overrides::default()
        }
        .apply(&mut cfg)
        .unwrap();
        let e = cfg.resolve().unwrap();
        assert_eq!(e.dictionary.len(), 9);
        assert_eq!(e.steps, 20);
        assert!(matches!(e.signals[0], SignalSpec::WhiteNoise { seed: 40, .. }));
    }
}
