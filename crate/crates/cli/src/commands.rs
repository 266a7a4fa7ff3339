//! The `lift`, `simulate`, `edmd` and `bounds` pipelines.

use std::fs;
use std::path::{Path, PathBuf};

use koopman_core::bounds::{beta_grid, beta_trajectory, error_trajectory, BetaEstimate, BoundReport};
use koopman_core::edmd::{
    alpha_grid_search, build_snapshots, default_alpha_grid, edmd_full, edmd_tikhonov,
    edmdc_input_fit, AlphaSearch, SnapshotData,
};
use koopman_core::io::{
    bound_report_csv, bound_report_json, error_report_docs, fmt17, to_json, trajectory_csv,
    LiftedDoc, LpvDoc, LtiDoc, ModelDocument, StateErrorDoc,
};
use koopman_core::lifting::LiftedModel;
use koopman_core::linalg::spectral_radius;
use koopman_core::lpv::{make_lpv, make_lti, LpvKoopmanModel, LtiKoopmanModel};
use koopman_core::sim::{
    error_metrics, input_matrix, simulate_lpv, simulate_lti, simulate_nonlinear, ErrorReport,
    Trajectory,
};
use koopman_core::systems::{monomial_dictionary, DomainBox, ObservableDictionary, TimeDomain};
use koopman_core::KoopmanError;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;

use crate::config::{BoundsConfig, Experiment, FitConfig, SweepConfig};
use crate::error::{config_err, CliError, CliResult};

/// Where a command writes its files; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct OutputDir(Option<PathBuf>);

impl OutputDir {
    pub fn new(path: Option<PathBuf>) -> Self {
        Self(path)
    }

    pub fn path(&self) -> Option<&Path> {
        self.0.as_deref()
    }

    pub fn join(&self, sub: &str) -> Self {
        Self(self.0.as_ref().map(|p| p.join(sub)))
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let Some(dir) = &self.0 else { return Ok(()) };
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| CliError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(io(&path))
    }
}

fn write_config(exp: &Experiment, out: &OutputDir) -> CliResult<()> {
    out.write("config.resolved.toml", &exp.effective.to_toml()?)
}

fn metadata(exp: &Experiment) -> Value {
    json!({
        "system": exp.system.name,
        "time_domain": exp.system.time_domain(),
        "ts": exp.ts,
        "steps": exp.steps,
        "observables": exp.dictionary.describe(),
        "config": serde_json::to_value(&exp.effective).expect("config serializes"),
    })
}

pub struct LiftOutcome {
    pub lifted: LiftedModel,
    pub lpv: Option<LpvKoopmanModel>,
    pub document: ModelDocument,
}

impl LiftOutcome {
    /// `A` row by row plus the span residual, as printed by `lift`.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "observables: [{}]\nA =\n",
            self.lifted.dictionary().describe().join(", ")
        );
        for row in self.lifted.a().row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&format!("  [{}]\n", cells.join(", ")));
        }
        s.push_str(&format!("span residual = {:e}\n", self.lifted.residual()));
        s
    }
}

pub fn lift(exp: &Experiment) -> CliResult<LiftOutcome> {
    let lifted = LiftedModel::from_system_with_dictionary(
        &exp.system,
        exp.dictionary.clone(),
        exp.quadrature.clone(),
        exp.span_tolerance,
    )?;
    if !lifted.is_exact() {
        return Err(KoopmanError::InvariantSubspaceViolation {
            residual: lifted.residual(),
            offending: Vec::new(),
        }
        .into());
    }
    let lpv = match make_lpv(&lifted) {
        Ok(m) => Some(m),
        Err(KoopmanError::MissingStateSelector) => None,
        Err(e) => return Err(e.into()),
    };
    let document = ModelDocument {
        system: exp.system.name.clone(),
        lifted: LiftedDoc::new(&lifted),
        lpv: lpv.as_ref().map(LpvDoc::new),
        lti: Vec::new(),
    };
    Ok(LiftOutcome {
        lifted,
        lpv,
        document,
    })
}

pub fn run_lift(exp: &Experiment, out: &OutputDir) -> CliResult<LiftOutcome> {
    let outcome = lift(exp)?;
    write_config(exp, out)?;
    out.write("model.json", &to_json(&outcome.document)?)?;
    Ok(outcome)
}

fn require_lpv(lift: &LiftOutcome) -> CliResult<&LpvKoopmanModel> {
    lift.lpv.as_ref().ok_or_else(|| {
        config_err("the dictionary must contain every state coordinate to recover x from z")
    })
}

/// A simulated model compared against the nonlinear reference.
pub struct ModelRun {
    pub label: String,
    /// States mapped back to `x`; `None` when the simulation diverged.
    pub trajectory: Option<Trajectory>,
    pub errors: Option<ErrorReport>,
    pub failure: Option<String>,
}

impl ModelRun {
    fn new(label: &str, reference: &Trajectory, sim: CliResult<Trajectory>) -> CliResult<Self> {
        match sim {
            Ok(traj) => {
                let errors = error_metrics(reference, &traj, None)?;
                let finite = errors.states.iter().all(|s| s.l2.is_finite() && s.linf.is_finite());
                Ok(Self {
                    label: label.into(),
                    failure: (!finite).then(|| "non-finite error".to_string()),
                    trajectory: Some(traj),
                    errors: Some(errors),
                })
            }
            Err(CliError::Core(e @ (KoopmanError::Divergence { .. } | KoopmanError::NonFinite { .. } | KoopmanError::Domain { .. }))) => Ok(Self {
                label: label.into(),
                trajectory: None,
                errors: None,
                failure: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        }
    }

    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }

    /// `||eps_1||_l2 + ... + ||eps_n||_l2`, infinite when diverged.
    pub fn cost(&self) -> f64 {
        match (&self.errors, self.diverged()) {
            (Some(r), false) => r.states.iter().map(|s| s.l2).sum(),
            _ => f64::INFINITY,
        }
    }
}

/// Everything shared by the simulation-based commands.
pub struct Scenario {
    pub inputs: DMatrix<f64>,
    pub nonlinear: Trajectory,
    pub lift: LiftOutcome,
    pub z0: DVector<f64>,
}

impl Scenario {
    pub fn new(exp: &Experiment) -> CliResult<Self> {
        let lift = lift(exp)?;
        let inputs = input_matrix(&exp.signals, exp.ts, exp.steps + 1)?;
        let nonlinear =
            simulate_nonlinear("nonlinear", &exp.system.dynamics, &exp.system.x0, &inputs, exp.ts, exp.steps)?;
        let z0 = exp.dictionary.eval(&exp.system.x0)?;
        Ok(Self {
            inputs,
            nonlinear,
            lift,
            z0,
        })
    }

    pub fn exact(&self, exp: &Experiment) -> CliResult<ModelRun> {
        let lpv = require_lpv(&self.lift)?;
        let sim = simulate_lpv("exact", lpv, &self.z0, &self.inputs, exp.ts, exp.steps)
            .and_then(|t| t.mapped(lpv.c(), "exact"))
            .map_err(CliError::from);
        ModelRun::new("exact", &self.nonlinear, sim)
    }

    pub fn snapshots(&self, dict: &ObservableDictionary) -> CliResult<SnapshotData> {
        Ok(build_snapshots(&self.nonlinear, dict)?)
    }

    /// Simulates an LTI model lifted with `dict`, starting from `Phi(x0)`.
    pub fn run_lti(
        &self,
        exp: &Experiment,
        label: &str,
        dict: &ObservableDictionary,
        lti: &LtiKoopmanModel,
    ) -> CliResult<ModelRun> {
        let z0 = dict.eval(&exp.system.x0)?;
        let sim = simulate_lti(label, lti, TimeDomain::Discrete, &z0, &self.inputs, exp.ts, exp.steps)
            .and_then(|t| t.mapped(&lti.c, label))
            .map_err(CliError::from);
        let mut run = ModelRun::new(label, &self.nonlinear, sim)?;
        if run.failure.is_none() && spectral_radius(&lti.a) >= 1.0 {
            run.failure = Some(format!("unstable: spectral radius {:e} >= 1", spectral_radius(&lti.a)));
        }
        Ok(run)
    }

    /// `B_hat` by least squares on the nonlinear trajectory with the exact `A`.
    pub fn edmdc(&self, exp: &Experiment) -> CliResult<LtiKoopmanModel> {
        let data = self.snapshots(&exp.dictionary)?;
        let a = self.lift.lifted.a().clone();
        let fit = edmdc_input_fit(&data, &a)?;
        Ok(make_lti(a, fit.b_hat, exp.dictionary.output_matrix()?)?)
    }
}

fn require_discrete(exp: &Experiment, what: &str) -> CliResult<()> {
    match exp.system.time_domain() {
        TimeDomain::Discrete => Ok(()),
        TimeDomain::Continuous => Err(config_err(format!("{what} needs a discrete-time system"))),
    }
}

/// A fitted LTI model with the data needed to report it.
pub struct FittedLti {
    pub label: String,
    pub model: LtiKoopmanModel,
    pub alpha: Option<f64>,
    pub search: Option<AlphaSearch>,
    pub run: ModelRun,
}

fn full_lti(data: &SnapshotData, dict: &ObservableDictionary, alpha: Option<f64>) -> CliResult<LtiKoopmanModel> {
    let fit = match alpha {
        None => edmd_full(data),
        Some(a) => edmd_tikhonov(data, a)?,
    };
    Ok(make_lti(fit.a, fit.b, dict.output_matrix()?)?)
}

/// Tikhonov fit, searching `alpha` to minimize the summed `l2` state errors.
fn tikhonov_search(
    scenario: &Scenario,
    exp: &Experiment,
    data: &SnapshotData,
    dict: &ObservableDictionary,
    grid: &[f64],
) -> CliResult<(f64, AlphaSearch)> {
    let search = alpha_grid_search(grid, |alpha| {
        let lti = full_lti(data, dict, Some(alpha)).map_err(into_core)?;
        let run = scenario.run_lti(exp, "search", dict, &lti).map_err(into_core)?;
        if run.diverged() {
            return Err(KoopmanError::Divergence {
                label: format!("alpha {alpha:e}"),
                step: 0,
            });
        }
        Ok(run.cost())
    })?;
    Ok((search.best_alpha, search))
}

fn into_core(e: CliError) -> KoopmanError {
    match e {
        CliError::Core(e) => e,
        other => KoopmanError::InvalidArgument(other.to_string()),
    }
}

pub fn fit_models(scenario: &Scenario, exp: &Experiment, fits: &[FitConfig]) -> CliResult<Vec<FittedLti>> {
    if fits.is_empty() {
        return Ok(Vec::new());
    }
    require_discrete(exp, "fitting an LTI model")?;
    let dict = &exp.dictionary;
    let data = scenario.snapshots(dict)?;
    fits.iter()
        .map(|fit| {
            let label = fit.label();
            let (model, alpha, search) = match fit {
                FitConfig::Edmdc => (scenario.edmdc(exp)?, None, None),
                FitConfig::EdmdFull => (full_lti(&data, dict, None)?, None, None),
                FitConfig::EdmdTikhonov { alpha: Some(a), .. } => {
                    (full_lti(&data, dict, Some(*a))?, Some(*a), None)
                }
                FitConfig::EdmdTikhonov { alpha: None, grid } => {
                    let grid = grid.clone().unwrap_or_else(default_alpha_grid);
                    let (best, search) = tikhonov_search(scenario, exp, &data, dict, &grid)?;
                    (full_lti(&data, dict, Some(best))?, Some(best), Some(search))
                }
            };
            let run = scenario.run_lti(exp, &label, dict, &model)?;
            Ok(FittedLti {
                label,
                model,
                alpha,
                search,
                run,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RunDoc {
    diverged: bool,
    failure: Option<String>,
    states: Option<Vec<StateErrorDoc>>,
}

/// `errors.json`: resolved settings plus one report per simulated model.
#[derive(Serialize)]
struct ErrorsDoc {
    metadata: Value,
    reports: BTreeMap<String, RunDoc>,
}

pub struct SimulateOutcome {
    pub nonlinear: Trajectory,
    pub exact: ModelRun,
    pub fitted: Vec<FittedLti>,
    pub document: ModelDocument,
}

impl SimulateOutcome {
    pub fn runs(&self) -> impl Iterator<Item = &ModelRun> {
        std::iter::once(&self.exact).chain(self.fitted.iter().map(|f| &f.run))
    }

    pub fn errors_json(&self, exp: &Experiment) -> CliResult<String> {
        let reports = self
            .runs()
            .map(|run| {
                let doc = RunDoc {
                    diverged: run.diverged(),
                    failure: run.failure.clone(),
                    states: run.errors.as_ref().map(error_report_docs),
                };
                (run.label.clone(), doc)
            })
            .collect();
        Ok(to_json(&ErrorsDoc {
            metadata: metadata(exp),
            reports,
        })?)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for run in self.runs() {
            match (&run.errors, &run.failure) {
                (_, Some(f)) => s.push_str(&format!("{}: diverged ({f})\n", run.label)),
                (Some(r), None) => {
                    for st in &r.states {
                        s.push_str(&format!(
                            "{}: eps{} l2 = {:e}, linf = {:e}\n",
                            run.label, st.state_index, st.l2, st.linf
                        ));
                    }
                }
                (None, None) => {}
            }
        }
        s
    }
}

pub fn simulate(exp: &Experiment) -> CliResult<SimulateOutcome> {
    let scenario = Scenario::new(exp)?;
    let exact = scenario.exact(exp)?;
    if let Some(f) = &exact.failure {
        return Err(KoopmanError::Divergence {
            label: format!("exact model: {f}"),
            step: exp.steps,
        }
        .into());
    }
    let fitted = fit_models(&scenario, exp, &exp.fits)?;
    let mut document = scenario.lift.document.clone();
    document.lti = fitted
        .iter()
        .map(|f| (f.label.clone(), LtiDoc::new(&f.model)))
        .collect();
    Ok(SimulateOutcome {
        nonlinear: scenario.nonlinear,
        exact,
        fitted,
        document,
    })
}

pub fn run_simulate(exp: &Experiment, out: &OutputDir) -> CliResult<SimulateOutcome> {
    let outcome = simulate(exp)?;
    write_config(exp, out)?;
    out.write("model.json", &to_json(&outcome.document)?)?;
    out.write("traj_nonlinear.csv", &trajectory_csv(&outcome.nonlinear))?;
    for run in outcome.runs() {
        if let Some(t) = &run.trajectory {
            out.write(&format!("traj_{}.csv", run.label), &trajectory_csv(t))?;
        }
    }
    out.write("errors.json", &outcome.errors_json(exp)?)?;
    Ok(outcome)
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub degree: u32,
    pub alpha: Option<f64>,
    pub l2: Vec<f64>,
    pub diverged: bool,
    pub method: &'static str,
}

impl SweepRow {
    fn from_run(degree: u32, alpha: Option<f64>, method: &'static str, run: &ModelRun, n_x: usize) -> Self {
        // Unstable but finite runs keep their errors; failed simulations have none.
        let l2 = match &run.errors {
            Some(r) => r.states.iter().map(|s| s.l2).collect(),
            None => vec![f64::NAN; n_x],
        };
        Self {
            degree,
            alpha,
            l2,
            diverged: run.diverged(),
            method,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let n_x = rows.first().map_or(0, |r| r.l2.len());
    let mut out = String::from("degree,alpha");
    for i in 1..=n_x {
        out.push_str(&format!(",l2_e{i}"));
    }
    out.push_str(",diverged,method\n");
    for r in rows {
        let alpha = r.alpha.map_or_else(|| "none".to_string(), fmt17);
        let l2: Vec<String> = r.l2.iter().map(|&v| fmt17(v)).collect();
        out.push_str(&format!(
            "{},{alpha},{},{},{}\n",
            r.degree,
            l2.join(","),
            r.diverged,
            r.method
        ));
    }
    out
}

pub struct EdmdOutcome {
    pub fitted: Vec<FittedLti>,
    pub sweep: Vec<SweepRow>,
    pub document: ModelDocument,
}

fn max_degree(dict: &ObservableDictionary) -> u32 {
    dict.monomials()
        .map(|ms| ms.iter().map(|m| m.degree()).max().unwrap_or(0))
        .unwrap_or(0)
}

fn degree_sweep(scenario: &Scenario, exp: &Experiment, sweep: &SweepConfig) -> CliResult<Vec<SweepRow>> {
    let n_x = exp.system.dynamics.n_x();
    let base = max_degree(&exp.dictionary);
    let exact = scenario.exact(exp)?;
    let mut rows = vec![SweepRow::from_run(base, None, "exact_lpv", &exact, n_x)];
    let edmdc = scenario.edmdc(exp)?;
    let edmdc_run = scenario.run_lti(exp, "edmdc", &exp.dictionary, &edmdc)?;
    rows.push(SweepRow::from_run(base, None, "edmdc", &edmdc_run, n_x));
    for degree in sweep.min_degree..=sweep.max_degree {
        let dict = monomial_dictionary(n_x, degree, false)?;
        let data = scenario.snapshots(&dict)?;
        let lti = full_lti(&data, &dict, None)?;
        let run = scenario.run_lti(exp, "edmd_full", &dict, &lti)?;
        rows.push(SweepRow::from_run(degree, None, "edmd_full", &run, n_x));
        if sweep.tikhonov {
            let row = match tikhonov_search(scenario, exp, &data, &dict, &default_alpha_grid()) {
                Ok((alpha, _)) => {
                    let lti = full_lti(&data, &dict, Some(alpha))?;
                    let run = scenario.run_lti(exp, "edmd_tikhonov", &dict, &lti)?;
                    SweepRow::from_run(degree, Some(alpha), "edmd_tikhonov", &run, n_x)
                }
                Err(CliError::Core(KoopmanError::AllDiverged { .. })) => SweepRow {
                    degree,
                    alpha: None,
                    l2: vec![f64::NAN; n_x],
                    diverged: true,
                    method: "edmd_tikhonov",
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn edmd(exp: &Experiment) -> CliResult<EdmdOutcome> {
    require_discrete(exp, "edmd")?;
    let scenario = Scenario::new(exp)?;
    let fits = if exp.fits.is_empty() && exp.sweep.is_none() {
        vec![FitConfig::Edmdc]
    } else {
        exp.fits.clone()
    };
    let fitted = fit_models(&scenario, exp, &fits)?;
    let sweep = match &exp.sweep {
        Some(s) => degree_sweep(&scenario, exp, s)?,
        None => Vec::new(),
    };
    let mut document = scenario.lift.document.clone();
    document.lti = fitted
        .iter()
        .map(|f| (f.label.clone(), LtiDoc::new(&f.model)))
        .collect();
    Ok(EdmdOutcome {
        fitted,
        sweep,
        document,
    })
}

pub fn run_edmd(exp: &Experiment, out: &OutputDir) -> CliResult<EdmdOutcome> {
    let outcome = edmd(exp)?;
    write_config(exp, out)?;
    out.write("model.json", &to_json(&outcome.document)?)?;
    if !outcome.sweep.is_empty() {
        out.write("sweep.csv", &sweep_csv(&outcome.sweep))?;
    }
    Ok(outcome)
}

pub struct BoundsOutcome {
    pub report: BoundReport,
    pub beta_grid: BetaEstimate,
    pub beta_trajectory: BetaEstimate,
    pub lti: LtiKoopmanModel,
    /// Largest gap between the simulated error and its recurrence.
    pub recurrence_discrepancy: f64,
}

fn domain(explicit: &Option<(Vec<f64>, Vec<f64>)>, samples: &DMatrix<f64>, inflation: f64) -> CliResult<DomainBox> {
    Ok(match explicit {
        Some((lo, hi)) => DomainBox::new(lo.clone(), hi.clone()).map_err(|e| config_err(e.to_string()))?,
        None => DomainBox::envelope(samples)?.inflate(inflation),
    })
}

/// Error bounds of the EDMDc LTI model against the exact LPV model.
///
/// `beta` is the larger of the gridded estimate and the maximum along the
/// trajectory, so every visited `(x, u)` is covered.
pub fn bounds(exp: &Experiment) -> CliResult<BoundsOutcome> {
    require_discrete(exp, "bounds")?;
    let cfg = exp.bounds.clone().unwrap_or_default();
    let BoundsConfig {
        grid_density,
        x_box,
        u_box,
        inflation,
    } = &cfg;
    let scenario = Scenario::new(exp)?;
    let lpv = require_lpv(&scenario.lift)?;
    let lti = scenario.edmdc(exp)?;
    let errors = error_trajectory(lpv, &lti, &scenario.z0, &scenario.inputs, exp.steps)?;
    let xs = domain(x_box, &scenario.nonlinear.states, *inflation)?;
    let us = domain(u_box, &scenario.inputs, *inflation)?;
    let grid = beta_grid(lpv, &exp.dictionary, &lti.b_hat, &xs, &us, *grid_density)?;
    let traj = beta_trajectory(lpv, &exp.dictionary, &lti.b_hat, &scenario.nonlinear.states, &scenario.inputs)?;
    let beta = grid.beta.max(traj.beta);
    let report = BoundReport::new(lpv.a(), beta, &errors, &scenario.inputs)?;
    Ok(BoundsOutcome {
        report,
        beta_grid: grid,
        beta_trajectory: traj,
        lti,
        recurrence_discrepancy: errors.max_discrepancy,
    })
}

pub fn run_bounds(exp: &Experiment, out: &OutputDir) -> CliResult<BoundsOutcome> {
    let outcome = bounds(exp)?;
    write_config(exp, out)?;
    out.write("bounds.csv", &bound_report_csv(&outcome.report))?;
    out.write("bounds.json", &bound_report_json(&outcome.report)?)?;
    Ok(outcome)
}
