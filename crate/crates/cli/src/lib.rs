//! Command-line front end for exact Koopman lifting experiments.

pub mod commands;
pub mod config;
pub mod error;
pub mod presets;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{run_bounds, run_edmd, run_lift, run_simulate, OutputDir};
use crate::config::{ExperimentConfig, Overrides};
pub use crate::error::{CliError, CliResult};
use crate::presets::{preset, Command};

#[derive(Debug, Parser)]
#[command(name = "koopman", version, about = "Exact Koopman lifting, simulation, EDMD fits and error bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Compute the lifted state matrix and write model.json.
    Lift,
    /// Simulate the nonlinear, exact Koopman and fitted models.
    Simulate {
        /// Run a preset instead of a configured experiment.
        #[arg(long)]
        reproduce: Option<String>,
    },
    /// Fit LTI models and run the configured degree sweep.
    Edmd,
    /// Error bounds of the EDMDc model (discrete time only).
    Bounds,
    /// Run a built-in preset.
    Reproduce { preset: String },
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written without it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Built-in system: ct-example or dt-example.
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// Comma-separated observables, e.g. "x1,x2,x1^2".
    #[arg(long, global = true)]
    pub dict: Option<String>,
    /// Use all monomials up to this degree as observables.
    #[arg(long, global = true)]
    pub degree: Option<u32>,
    #[arg(long, global = true)]
    pub ts: Option<f64>,
    /// Seconds in continuous time, steps in discrete time.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Seed of the first white-noise channel; later channels count up.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub quad_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub grid_density: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            system: self.system.clone(),
            dict: self.dict.clone(),
            degree: self.degree,
            ts: self.ts,
            horizon: self.horizon,
            seed: self.seed,
            quadrature_nodes: self.quad_nodes,
            grid_density: self.grid_density,
        }
    }

    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        self.overrides().apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn run_config(command: Command, cfg: &ExperimentConfig, out: &OutputDir) -> CliResult<String> {
    let exp = cfg.resolve()?;
    Ok(match command {
        Command::Simulate => run_simulate(&exp, out)?.summary(),
        Command::Edmd => {
            let o = run_edmd(&exp, out)?;
            let mut s = String::new();
            for f in &o.fitted {
                s.push_str(&format!("{}: cost {:e}\n", f.label, f.run.cost()));
            }
            s.push_str(&format!("{} sweep rows\n", o.sweep.len()));
            s
        }
        Command::Bounds => {
            let o = run_bounds(&exp, out)?;
            let r = &o.report;
            format!(
                "rho(A) = {:e}, sigma(A) = {:e}, beta = {:e}, |u|_inf = {:e}\nabsolute bound = {}\nfinal tv bound = {:e}, max error = {:e}\n",
                r.rho_a,
                r.sigma_a,
                r.beta,
                r.u_linf,
                r.absolute_bound.map_or_else(|| koopman_core::io::NOT_APPLICABLE.to_string(), |b| format!("{b:e}")),
                r.timevarying_bound.last().copied().unwrap_or(0.0),
                r.error_norm.iter().copied().fold(0.0, f64::max),
            )
        }
    })
}

fn run_preset(name: &str, common: &CommonArgs) -> CliResult<String> {
    let out = OutputDir::new(common.out.clone());
    let mut summary = String::new();
    for run in preset(name)? {
        let mut cfg = run.config;
        common.overrides().apply(&mut cfg)?;
        let dir = match run.subdir {
            Some(sub) => {
                summary.push_str(&format!("[{sub}]\n"));
                out.join(sub)
            }
            None => out.clone(),
        };
        summary.push_str(&run_config(run.command, &cfg, &dir)?);
    }
    Ok(summary)
}

/// Runs a parsed command line and returns the text to print.
pub fn run(cli: &Cli) -> CliResult<String> {
    let out = OutputDir::new(cli.common.out.clone());
    match &cli.command {
        Cmd::Lift => {
            let exp = cli.common.config()?.resolve()?;
            Ok(run_lift(&exp, &out)?.summary())
        }
        Cmd::Simulate { reproduce: Some(name) } | Cmd::Reproduce { preset: name } => {
            if cli.common.config.is_some() {
                return Err(error::CliError::Config("--config cannot be combined with a preset".into()));
            }
            run_preset(name, &cli.common)
        }
        Cmd::Simulate { reproduce: None } => run_config(Command::Simulate, &cli.common.config()?, &out),
        Cmd::Edmd => run_config(Command::Edmd, &cli.common.config()?, &out),
        Cmd::Bounds => run_config(Command::Bounds, &cli.common.config()?, &out),
    }
}
