//! Batch experiments: each run reads a [`RunConfig`], writes its CSV
//! datasets into an output directory and finishes with `manifest.json`,
//! which is written even when the run fails.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::HarmonicIndexSet;
use crate::config::{ConfigError, Experiment, RunConfig};
use crate::error::Error;
use crate::hb::{self, ForwardProblem, HbSolution};
use crate::inverse::{self, InverseSolution, StackedInverseProblem};
use crate::magnus::{self, ControlPrediction, DEFAULT_TRUNCATION_DEGREE};
use crate::models::{DriveModel, PendulumModel};
use crate::oracles::{self, IntegratorConfig, ModelTrajectory, SymmetricWell, Trajectory};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunError {
    Config(String),
    Solver(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Solver(m) => write!(f, "solver error: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. }
            | Error::InverseNotConverged { .. }
            | Error::SingularJacobian
            | Error::StepSizeUnderflow(_)
            | Error::NonFinite { .. }
            | Error::NoRoot { .. }
            | Error::Unstable(_)
            | Error::NonMonotonic(_)
            | Error::ZeroReference => RunError::Solver(e.to_string()),
            _ => RunError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub label: String,
    pub kind: &'static str,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub residual_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeding: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SolveDiagnostics {
    fn forward(label: impl Into<String>, sol: &HbSolution) -> Self {
        Self {
            label: label.into(),
            kind: "forward",
            converged: sol.converged,
            iterations: sol.iterations,
            residual_norm: sol.residual_norm,
            residual_trace: sol.residual_trace.clone(),
            seeding: None,
            error: None,
        }
    }

    fn inverse(label: impl Into<String>, sol: &InverseSolution) -> Self {
        Self {
            label: label.into(),
            kind: "inverse",
            converged: sol.converged,
            iterations: sol.iterations,
            residual_norm: sol.residual_norm,
            residual_trace: sol.residual_trace.clone(),
            seeding: Some(sol.seeding.clone()),
            error: None,
        }
    }

    fn failed(label: impl Into<String>, kind: &'static str, err: &Error) -> Self {
        let (iterations, residual_norm, residual_trace) = match err {
            Error::NotConverged { best } => (best.iterations, best.residual_norm, best.residual_trace.clone()),
            Error::InverseNotConverged {
                residual_norm,
                iterations,
                ..
            } => (*iterations, *residual_norm, Vec::new()),
            _ => (0, f64::NAN, Vec::new()),
        };
        Self {
            label: label.into(),
            kind,
            converged: false,
            iterations,
            residual_norm,
            residual_trace,
            seeding: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub status: String,
    pub config: RunConfig,
    pub diagnostics: Vec<SolveDiagnostics>,
    /// Headline scalars of the run (deviations, gaps, counts).
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub failures: Vec<String>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    manifest: RunManifest,
}

impl<'a> Run<'a> {
    fn file_name(&self, name: &str) -> String {
        format!("{}{}", self.cfg.output.prefix, name)
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<(), RunError> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    text.push(',');
                }
                c.write(&mut text);
            }
            text.push('\n');
        }
        let file = self.file_name(name);
        write_atomic(&self.dir.join(&file), text.as_bytes())?;
        self.manifest.artifacts.push(file);
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let t0 = Instant::now();
        let out = f(self);
        self.manifest.timings.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        out
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.manifest.metrics.insert(name.to_string(), value);
    }

    /// Records the diagnostics of a forward solve and unwraps it.
    fn forward(&mut self, label: &str, problem: &ForwardProblem) -> Result<HbSolution, RunError> {
        match hb::solve_forward(problem) {
            Ok(sol) => {
                self.manifest.diagnostics.push(SolveDiagnostics::forward(label, &sol));
                Ok(sol)
            }
            Err(e) => {
                self.manifest.diagnostics.push(SolveDiagnostics::failed(label, "forward", &e));
                self.manifest.failures.push(format!("{label}: {e}"));
                Err(e.into())
            }
        }
    }

    fn inverse(&mut self, label: &str, problem: &StackedInverseProblem) -> Result<InverseSolution, RunError> {
        match inverse::solve_inverse(problem) {
            Ok(sol) => {
                self.manifest.diagnostics.push(SolveDiagnostics::inverse(label, &sol));
                Ok(sol)
            }
            Err(e) => {
                self.manifest.diagnostics.push(SolveDiagnostics::failed(label, "inverse", &e));
                self.manifest.failures.push(format!("{label}: {e}"));
                Err(e.into())
            }
        }
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn opt(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }

    fn write(&self, out: &mut String) {
        match self {
            Cell::Num(v) if v.is_finite() => {
                let _ = write!(out, "{}", format_number(*v));
            }
            Cell::Num(_) | Cell::Empty => {}
            Cell::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Cell::Text(s) => out.push_str(s),
        }
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_number(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Runs `experiment` with `cfg`, writing into `out_dir`.
///
/// The manifest is written whenever the output directory could be created,
/// including after a failed run.
pub fn run(experiment: Experiment, cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    cfg.validate()?;
    if let Some(e) = cfg.experiment {
        if e != experiment {
            return Err(RunError::Config(format!(
                "config is for `{e}` but `{experiment}` was requested"
            )));
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut run = Run {
        cfg,
        dir: out_dir.to_path_buf(),
        manifest: RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            experiment: experiment.to_string(),
            status: "running".into(),
            config: cfg.clone(),
            diagnostics: Vec::new(),
            metrics: BTreeMap::new(),
            timings: BTreeMap::new(),
            artifacts: Vec::new(),
            failures: Vec::new(),
        },
    };
    let t0 = Instant::now();
    let result = match experiment {
        Experiment::Forward => forward_experiment(&mut run),
        Experiment::Engineer => engineer_experiment(&mut run),
        Experiment::Sweep => sweep_experiment(&mut run),
        Experiment::CompareMagnus => compare_experiment(&mut run),
        Experiment::Verify => verify_experiment(&mut run),
    };
    run.manifest.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    run.manifest.status = match &result {
        Ok(()) => "ok".into(),
        Err(e) => {
            run.manifest.failures.push(e.to_string());
            format!("failed ({})", e.exit_code())
        }
    };
    let manifest_name = run.file_name(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&run.manifest).map_err(|e| RunError::Io(e.to_string()))? + "\n";
    write_atomic(&out_dir.join(manifest_name), json.as_bytes())?;
    result.map(|()| run.manifest)
}

fn forward_problem(cfg: &RunConfig, model: Box<dyn DriveModel>, set: HarmonicIndexSet, a01: f64) -> ForwardProblem {
    let grid = cfg.grid_for(&set);
    ForwardProblem::new(model, set, a01)
        .with_grid(grid)
        .with_theta(cfg.initial.theta)
}

fn stacked_problem(cfg: &RunConfig) -> Result<StackedInverseProblem, RunError> {
    let model = cfg.build_model()?;
    let set = cfg.index_set()?;
    let target = cfg
        .target()?
        .ok_or_else(|| RunError::Config("this experiment needs a [target] section".into()))?;
    let mut p = StackedInverseProblem::new(model, set, target);
    p.grid = cfg.grid_for(&p.set);
    p.theta = cfg.initial.theta;
    p.blocks = cfg.blocks(p.controls.len());
    if p.blocks.len() != p.controls.len() + 1 {
        return Err(RunError::Config(format!(
            "{} controls need {} collocation amplitudes, got {}",
            p.controls.len(),
            p.controls.len() + 1,
            p.blocks.len()
        )));
    }
    Ok(p)
}

fn reference_trajectory(cfg: &RunConfig, model: &dyn DriveModel, sol: &HbSolution) -> Result<ModelTrajectory, RunError> {
    let (u0, v0) = oracles::initial_state_from_solution(sol);
    Ok(oracles::integrate(model, u0, v0, cfg.reference.window, IntegratorConfig::default())?)
}

/// Max NEFS deviation from the reference integration, or `None` when the
/// reference starts at `u = 0`.
fn max_deviation(cfg: &RunConfig, model: &dyn DriveModel, sol: &HbSolution) -> Result<Option<f64>, RunError> {
    let rk = reference_trajectory(cfg, model, sol)?;
    match oracles::deviation(&rk, sol, cfg.reference.window, cfg.reference.samples) {
        Ok(r) => Ok(Some(r.max_dev)),
        Err(Error::ZeroReference) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn solution_rows(label: &str, sol: &HbSolution) -> Vec<Vec<Cell>> {
    sol.coeffs
        .index_set
        .entries()
        .iter()
        .zip(&sol.coeffs.amplitudes)
        .map(|(&(m, k), &a)| {
            vec![
                Cell::Text(label.into()),
                Cell::Int(m as i64),
                Cell::Int(k as i64),
                Cell::Num(a),
                Cell::Num(sol.omega),
                Cell::Num(sol.beta),
                Cell::Num(sol.residual_norm),
            ]
        })
        .collect()
}

/// NEFS and OFS solves at `initial.a01`, compared against direct
/// integration from the NEFS initial state.
pub fn run_forward(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    run(Experiment::Forward, cfg, out_dir)
}

/// Inverse design of the configured controls plus verification of the
/// achieved amplitude-frequency relation.
pub fn run_engineer(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    run(Experiment::Engineer, cfg, out_dir)
}

/// Continuation of the inverse design over the sweep parameter.
pub fn run_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    run(Experiment::Sweep, cfg, out_dir)
}

pub fn run_compare_magnus(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    run(Experiment::CompareMagnus, cfg, out_dir)
}

pub fn run_verify(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    run(Experiment::Verify, cfg, out_dir)
}

fn forward_experiment(run: &mut Run) -> Result<(), RunError> {
    let cfg = run.cfg;
    let model = cfg.build_model()?;
    let nefs_p = forward_problem(cfg, model.clone(), cfg.index_set()?, cfg.initial.a01);
    let nefs = run.timed("nefs", |r| r.forward("nefs", &nefs_p))?;
    let ofs_p = forward_problem(cfg, model.clone(), cfg.ofs_index_set()?, cfg.initial.a01);
    let ofs = run.timed("ofs", |r| r.forward("ofs", &ofs_p))?;
    let rk = run.timed("reference", |_| reference_trajectory(cfg, model.as_ref(), &nefs))?;

    let u_ref0 = rk.position(0.0);
    let n = cfg.reference.samples;
    let window = cfg.reference.window;
    let (mut dev_nefs, mut dev_ofs) = (0.0f64, 0.0f64);
    let rows: Vec<Vec<Cell>> = (1..=n)
        .map(|i| {
            let xi = window * i as f64 / n as f64;
            let (ur, un, uo) = (rk.position(xi), nefs.position(xi), ofs.position(xi));
            let (dn, d_o) = if u_ref0 != 0.0 {
                (Some(((un - ur) / u_ref0).abs()), Some(((uo - ur) / u_ref0).abs()))
            } else {
                (None, None)
            };
            dev_nefs = dev_nefs.max(dn.unwrap_or(0.0));
            dev_ofs = dev_ofs.max(d_o.unwrap_or(0.0));
            vec![
                Cell::Num(xi),
                Cell::Num(ur),
                Cell::Num(un),
                Cell::Num(uo),
                Cell::opt(dn),
                Cell::opt(d_o),
            ]
        })
        .collect();
    if u_ref0 != 0.0 {
        run.metric("max_dev_nefs", dev_nefs);
        run.metric("max_dev_ofs", dev_ofs);
    }
    run.metric("omega_nefs", nefs.omega);
    run.metric("omega_ofs", ofs.omega);
    run.write_csv(
        "trajectory.csv",
        &["xi", "u_rk", "u_nefs", "u_ofs", "dev_nefs", "dev_ofs"],
        &rows,
    )?;
    let mut sol_rows = solution_rows("nefs", &nefs);
    sol_rows.extend(solution_rows("ofs", &ofs));
    run.write_csv(
        "solution.csv",
        &["basis", "m", "k", "amplitude", "omega", "beta", "residual_norm"],
        &sol_rows,
    )?;
    Ok(())
}

fn engineer_experiment(run: &mut Run) -> Result<(), RunError> {
    let cfg = run.cfg;
    let problem = stacked_problem(cfg)?;
    let sol = run.timed("inverse", |r| r.inverse("inverse", &problem))?;
    let amps = cfg.verify_amplitudes();
    let rows = run.timed("verification", |_| inverse::verify_target(&sol, &problem, &amps))?;

    let drive = problem.model.drive_frequency();
    let mut ctl: Vec<Vec<Cell>> = sol
        .controls
        .iter()
        .zip(&sol.alpha)
        .map(|(n, &a)| vec![Cell::Text(n.clone()), Cell::Empty, Cell::Num(a)])
        .collect();
    ctl.push(vec![Cell::Text("omega0".into()), Cell::Empty, Cell::Num(sol.omega0)]);
    ctl.push(vec![Cell::Text("beta0".into()), Cell::Empty, Cell::Num(2.0 * sol.omega0 / drive)]);
    for b in &sol.block_solutions {
        ctl.push(vec![Cell::Text("beta".into()), Cell::Num(b.a01), Cell::Num(b.beta)]);
    }
    run.write_csv("controls.csv", &["quantity", "a01", "value"], &ctl)?;

    let mut worst = 0.0f64;
    let ver: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            worst = worst.max(r.rel_error.unwrap_or(0.0));
            vec![
                Cell::Num(r.amplitude),
                Cell::Num(r.target_shift),
                Cell::Num(r.achieved_shift),
                Cell::opt(r.rel_error),
            ]
        })
        .collect();
    run.metric("max_rel_error", worst);
    run.metric("residual_norm", sol.residual_norm);
    run.write_csv("verification.csv", &["A", "target_shift", "achieved_shift", "rel_error"], &ver)?;
    Ok(())
}

/// Lowest-order anharmonicity of the configured target, if it was given
/// by anharmonicities.
fn lowest_c(problem: &StackedInverseProblem) -> Option<(u32, f64)> {
    let c = problem.target.c_source.as_ref()?;
    c.c_coeffs.iter().next().map(|(&k, &v)| (k, v))
}

fn predict(model: &dyn DriveModel, control: &str, order: u32, target: f64) -> Result<ControlPrediction, Error> {
    magnus::predict_control(model, control, order, target, None, DEFAULT_TRUNCATION_DEGREE)
}

struct SweepRow {
    value: f64,
    hb: Option<(f64, f64)>,
    fm: Option<(f64, f64)>,
    max_dev: Option<f64>,
    failures: Vec<String>,
    deviation_diag: Option<SolveDiagnostics>,
}

fn sweep_experiment(run: &mut Run) -> Result<(), RunError> {
    let cfg = run.cfg;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| RunError::Config("the sweep experiment needs a [sweep] section".into()))?;
    let problem = stacked_problem(cfg)?;
    if problem.controls.len() != 1 {
        return Err(RunError::Config("sweeps take exactly one control".into()));
    }
    let control = problem.controls[0].clone();
    let values = cfg.sweep_values();
    let points = run.timed("continuation", |_| inverse::continue_inverse(&problem, &sweep.param, &values))?;
    for p in &points {
        let label = format!("{}={}", sweep.param, format_number(p.value));
        match &p.result {
            Ok(s) => run.manifest.diagnostics.push(SolveDiagnostics::inverse(label, s)),
            Err(e) => {
                run.manifest.diagnostics.push(SolveDiagnostics::failed(label.clone(), "inverse", e));
                run.manifest.failures.push(format!("{label}: {e}"));
            }
        }
    }

    let dev_a01 = sweep.deviation_a01.unwrap_or(cfg.initial.a01);
    let drive = problem.model.drive_frequency();
    let c_target = lowest_c(&problem);
    let set = problem.set.clone();
    let rows: Vec<SweepRow> = run.timed("points", |_| {
        points
            .par_iter()
            .map(|p| {
                let mut row = SweepRow {
                    value: p.value,
                    hb: None,
                    fm: None,
                    max_dev: None,
                    failures: Vec::new(),
                    deviation_diag: None,
                };
                let label = format!("{}={}", sweep.param, format_number(p.value));
                let mut model = problem.model.clone();
                if let Err(e) = model.set_param_by_name(&sweep.param, p.value) {
                    row.failures.push(format!("{label}: {e}"));
                    return row;
                }
                if let Ok(s) = &p.result {
                    row.hb = Some((s.alpha[0], 2.0 * s.omega0 / drive));
                    let _ = model.set_param_by_name(&control, s.alpha[0]);
                }
                if let Some((order, c)) = c_target {
                    match predict(model.as_ref(), &control, order, c) {
                        Ok(fm) => row.fm = Some((fm.value, fm.beta)),
                        Err(e) => row.failures.push(format!("{label} fm: {e}")),
                    }
                }
                if p.result.is_ok() {
                    let fp = forward_problem(cfg, model.clone(), set.clone(), dev_a01);
                    let dlabel = format!("{label} deviation");
                    match hb::solve_forward(&fp) {
                        Ok(sol) => {
                            row.deviation_diag = Some(SolveDiagnostics::forward(dlabel.clone(), &sol));
                            match max_deviation(cfg, model.as_ref(), &sol) {
                                Ok(d) => row.max_dev = d,
                                Err(e) => row.failures.push(format!("{dlabel}: {e}")),
                            }
                        }
                        Err(e) => {
                            row.deviation_diag = Some(SolveDiagnostics::failed(dlabel.clone(), "forward", &e));
                            row.failures.push(format!("{dlabel}: {e}"));
                        }
                    }
                }
                row
            })
            .collect()
    });

    let mut out = Vec::with_capacity(rows.len());
    let mut converged = 0usize;
    for r in rows {
        converged += r.hb.is_some() as usize;
        run.manifest.diagnostics.extend(r.deviation_diag);
        run.manifest.failures.extend(r.failures);
        out.push(vec![
            Cell::Num(r.value),
            Cell::opt(r.hb.map(|h| h.0)),
            Cell::opt(r.hb.map(|h| h.1)),
            Cell::opt(r.fm.map(|f| f.0)),
            Cell::opt(r.fm.map(|f| f.1)),
            Cell::opt(r.max_dev),
        ]);
    }
    run.metric("points", values.len() as f64);
    run.metric("converged_points", converged as f64);
    run.write_csv(
        "sweep.csv",
        &["param", "control_hb", "beta_hb", "control_fm", "beta_fm", "max_dev"],
        &out,
    )?;
    Ok(())
}

fn rel_gap(fm: f64, hb: f64) -> Option<f64> {
    (fm != 0.0).then(|| ((hb - fm) / fm).abs())
}

fn compare_row(name: &str, fm: Option<f64>, hb: Option<f64>) -> Vec<Cell> {
    let gap = match (fm, hb) {
        (Some(f), Some(h)) => rel_gap(f, h),
        _ => None,
    };
    vec![Cell::Text(name.into()), Cell::opt(fm), Cell::opt(hb), Cell::opt(gap)]
}

/// With a target and one control: the harmonic-balance design against the
/// perturbative one. Without: `β` of a forward solve against the
/// effective-force `β`.
fn compare_experiment(run: &mut Run) -> Result<(), RunError> {
    let cfg = run.cfg;
    let model = cfg.build_model()?;
    let drive = model.drive_frequency();
    let mut rows = Vec::new();
    if cfg.target.is_some() {
        let problem = stacked_problem(cfg)?;
        if problem.controls.len() != 1 {
            return Err(RunError::Config("compare-magnus takes exactly one control".into()));
        }
        let control = problem.controls[0].clone();
        let (order, c) = lowest_c(&problem)
            .ok_or_else(|| RunError::Config("compare-magnus needs the target as anharmonicities".into()))?;
        let hb = run.timed("inverse", |r| r.inverse("inverse", &problem))?;
        let hb_model = hb.model_with_controls(problem.model.as_ref())?;
        let fm = run.timed("magnus", |_| predict(hb_model.as_ref(), &control, order, c))?;
        let hb_eff = magnus::model_effective_force(hb_model.as_ref(), DEFAULT_TRUNCATION_DEGREE)?;
        let hb_c = hb_eff.anharmonicities()?;
        let beta_hb = 2.0 * hb.omega0 / drive;
        rows.push(compare_row(&format!("control:{control}"), Some(fm.value), Some(hb.alpha[0])));
        rows.push(compare_row("beta", Some(fm.beta), Some(beta_hb)));
        for k in [4u32, 6, 8] {
            rows.push(compare_row(
                &format!("C{k}"),
                fm.anharmonicities.get(&k).copied(),
                hb_c.get(&k).copied(),
            ));
        }
        if let Some(g) = rel_gap(fm.value, hb.alpha[0]) {
            run.metric("control_gap", g);
        }
        if let Some(g) = rel_gap(fm.beta, beta_hb) {
            run.metric("beta_gap", g);
        }
    } else {
        let p = forward_problem(cfg, model.clone(), cfg.index_set()?, cfg.initial.a01);
        let sol = run.timed("forward", |r| r.forward("forward", &p))?;
        let eff = magnus::model_effective_force(model.as_ref(), DEFAULT_TRUNCATION_DEGREE)?;
        let beta_fm = eff.beta(drive);
        rows.push(compare_row("beta", Some(beta_fm), Some(sol.beta)));
        for (k, v) in eff.anharmonicities()? {
            if k <= 8 {
                rows.push(compare_row(&format!("C{k}"), Some(v), None));
            }
        }
        if let Some(g) = rel_gap(beta_fm, sol.beta) {
            run.metric("beta_gap", g);
        }
    }
    run.write_csv("compare.csv", &["quantity", "fm", "hb", "rel_gap"], &rows)?;
    Ok(())
}

/// Forward solve at `initial.a01` checked against every oracle that applies
/// to the model: direct integration always, the monodromy exponent for the
/// linear Mathieu equation, and exact period quadrature for drive-free
/// symmetric wells.
fn verify_experiment(run: &mut Run) -> Result<(), RunError> {
    let cfg = run.cfg;
    let model = cfg.build_model()?;
    let p = forward_problem(cfg, model.clone(), cfg.index_set()?, cfg.initial.a01);
    let sol = run.timed("forward", |r| r.forward("forward", &p))?;
    let mut rows = Vec::new();
    let check = |name: &str, hb: f64, oracle: Option<f64>| {
        vec![
            Cell::Text(name.into()),
            Cell::Num(hb),
            Cell::opt(oracle),
            Cell::opt(oracle.map(|o| (hb - o).abs())),
        ]
    };

    let dev = run.timed("reference", |_| max_deviation(cfg, model.as_ref(), &sol))?;
    if let Some(d) = dev {
        rows.push(check("max_dev", d, None));
        run.metric("max_dev", d);
    }
    let diag = hb::diagonal_residual(&sol, model.as_ref(), cfg.reference.window, cfg.reference.samples);
    rows.push(check("diagonal_residual", diag, None));

    match cfg.model.name.as_str() {
        "mathieu" => {
            let linear = (0..model.param_names().len())
                .filter(|&i| i >= 2)
                .all(|i| model.param(i) == Some(0.0));
            if linear {
                let q = model.param_by_name("q")?;
                let a = model.param_by_name("a")?;
                let beta = oracles::characteristic_exponent(q, a)?;
                let m = oracles::monodromy(q, a)?;
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                rows.push(check("beta", sol.beta, Some(beta)));
                rows.push(check("monodromy_det", det, Some(1.0)));
                run.metric("beta_gap", (sol.beta - beta).abs());
            }
        }
        "polynomial" | "pendulum" => {
            let well = if cfg.model.name == "polynomial" {
                SymmetricWell::from_polynomial_model(&cfg.polynomial_model()?)?
            } else {
                SymmetricWell::from_pendulum(&PendulumModel {
                    w2: model.param_by_name("w2")?,
                })
            };
            let amplitude = sol.initial_position();
            let omega = oracles::period_quadrature(&well, amplitude)?;
            rows.push(check("omega", sol.omega, Some(omega)));
            run.metric("omega_gap", (sol.omega - omega).abs());
        }
        _ => {}
    }
    run.write_csv("verify.csv", &["check", "hb", "oracle", "abs_diff"], &rows)?;
    Ok(())
}
