//! Built-in experiment presets for the two example systems.

use koopman_core::sim::SignalSpec;

use crate::config::{default_signals, ExperimentConfig, FitConfig, SweepConfig, SystemConfig};
use crate::error::{config_err, CliResult};
use koopman_core::systems::TimeDomain;

pub const PRESETS: [&str; 7] = [
    "ct-example-whitenoise",
    "ct-example-multisine",
    "dt-example-whitenoise",
    "dt-example-multisine",
    "dt-constB",
    "bounds",
    "degree-sweep",
];

/// Multisine amplitude for the continuous-time example; larger inputs make `x1 e^{u1}` blow up.
pub const CT_MULTISINE_AMPLITUDE: f64 = 0.1;
/// Multisine amplitude for the discrete-time example.
pub const DT_MULTISINE_AMPLITUDE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Edmd,
    Bounds,
}

/// One run of a preset; `subdir` separates the runs of multi-excitation presets.
#[derive(Clone, Debug)]
pub struct PresetRun {
    pub subdir: Option<&'static str>,
    pub command: Command,
    pub config: ExperimentConfig,
}

fn with_system(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemConfig {
            builtin: Some(name.into()),
            ..SystemConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn multisine(n_freq: usize, f_low: f64, f_high: f64, amplitude: f64) -> SignalSpec {
    SignalSpec::Multisine {
        n_freq,
        f_low,
        f_high,
        amplitude,
    }
}

pub fn ct_whitenoise() -> ExperimentConfig {
    let mut cfg = with_system("ct-example");
    cfg.simulation.signals = default_signals(TimeDomain::Continuous, 2);
    cfg
}

/// Six equidistant frequencies on `[0.1, 1]` Hz for `u1` and `[1, 10]` Hz for `u2`.
pub fn ct_multisine() -> ExperimentConfig {
    let mut cfg = with_system("ct-example");
    cfg.simulation.signals = vec![
        multisine(6, 0.1, 1.0, CT_MULTISINE_AMPLITUDE),
        multisine(6, 1.0, 10.0, CT_MULTISINE_AMPLITUDE),
    ];
    cfg
}

pub fn dt_whitenoise() -> ExperimentConfig {
    let mut cfg = with_system("dt-example");
    cfg.simulation.signals = default_signals(TimeDomain::Discrete, 1);
    cfg
}

/// Six equidistant frequencies on `[0.01, 0.1]` cycles per step.
pub fn dt_multisine() -> ExperimentConfig {
    let mut cfg = with_system("dt-example");
    cfg.simulation.signals = vec![multisine(6, 0.01, 0.1, DT_MULTISINE_AMPLITUDE)];
    cfg
}

fn both_dt(command: Command, tweak: impl Fn(&mut ExperimentConfig)) -> Vec<PresetRun> {
    [("whitenoise", dt_whitenoise()), ("multisine", dt_multisine())]
        .into_iter()
        .map(|(sub, mut config)| {
            tweak(&mut config);
            PresetRun {
                subdir: Some(sub),
                command,
                config,
            }
        })
        .collect()
}

pub fn preset(name: &str) -> CliResult<Vec<PresetRun>> {
    let single = |config| {
        vec![PresetRun {
            subdir: None,
            command: Command::Simulate,
            config,
        }]
    };
    Ok(match name {
        "ct-example-whitenoise" => single(ct_whitenoise()),
        "ct-example-multisine" => single(ct_multisine()),
        "dt-example-whitenoise" => single(dt_whitenoise()),
        "dt-example-multisine" => single(dt_multisine()),
        "dt-constB" => both_dt(Command::Simulate, |c| c.fits = vec![FitConfig::Edmdc]),
        "bounds" => both_dt(Command::Bounds, |_| {}),
        "degree-sweep" => both_dt(Command::Edmd, |c| c.sweep = Some(SweepConfig::default())),
        other => {
            return Err(config_err(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            for run in preset(name).unwrap() {
                run.config.resolve().unwrap();
            }
        }
        assert_eq!(preset("nope").unwrap_err().exit_code(), 2);
    }
}
