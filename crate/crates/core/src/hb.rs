//! Forward harmonic balance: for a prescribed secular amplitude `A01` and
//! phase `θ`, solve for the remaining amplitudes and the secular frequency.

use nalgebra::{DMatrix, DVector};

use crate::basis::{CoefficientTable, FrequencyPair, HarmonicIndexSet, MdftOperator, SamplingGrid};
use crate::error::{Error, Result};
use crate::models::DriveModel;
use crate::newton::{self, NewtonOptions, NonlinearSystem};

/// Default oversampling of the torus grid relative to the guardrail.
pub const DEFAULT_OVERSAMPLING: usize = 2;

/// How a cold start (no warm-start data) is seeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Seeding {
    /// Newton directly from the model seed at the requested amplitude.
    Direct,
    /// Warm-started solves at `A01·i/n`, `i = 1..=n`, with steps of at most
    /// `max_step`; falls back to `Direct` if a rung fails.
    AmplitudeLadder { max_step: f64 },
}

impl Default for Seeding {
    fn default() -> Self {
        Seeding::AmplitudeLadder { max_step: 0.01 }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub model: Box<dyn DriveModel>,
    pub set: HarmonicIndexSet,
    pub grid: SamplingGrid,
    pub a01: f64,
    pub theta: f64,
    /// Falls back to the model seed when `None`.
    pub omega_guess: Option<f64>,
    /// Amplitudes copied onto the model seed where the indices overlap.
    pub coeff_guess: Option<CoefficientTable>,
    pub options: NewtonOptions,
    pub seeding: Seeding,
}

impl ForwardProblem {
    pub fn new(model: Box<dyn DriveModel>, set: HarmonicIndexSet, a01: f64) -> Self {
        let grid = SamplingGrid::for_index_set(&set, DEFAULT_OVERSAMPLING);
        Self {
            model,
            set,
            grid,
            a01,
            theta: 0.0,
            omega_guess: None,
            coeff_guess: None,
            options: NewtonOptions::default(),
            seeding: Seeding::default(),
        }
    }

    pub fn with_grid(mut self, grid: SamplingGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Warm start from a previous solution.
    pub fn warm_start(&mut self, sol: &HbSolution) {
        self.omega_guess = Some(sol.omega);
        self.coeff_guess = Some(sol.coeffs.clone());
    }

    fn validate(&self) -> Result<()> {
        if !(self.a01 > 0.0) || !self.a01.is_finite() {
            return Err(Error::InvalidInput(format!(
                "secular amplitude must be positive and finite (got {})",
                self.a01
            )));
        }
        if let Some(w) = self.omega_guess {
            if !(w > 0.0) {
                return Err(Error::InvalidInput(format!("omega guess must be positive (got {w})")));
            }
        }
        Ok(())
    }

    pub fn operator(&self, omega: f64) -> Result<MdftOperator> {
        let freqs = FrequencyPair::new(omega, self.model.drive_frequency())?;
        MdftOperator::build(&self.set, &self.grid, freqs, self.theta)
    }

    /// Number of unknowns (free amplitudes plus `ω`); equals `|set|`.
    pub fn unknown_count(&self) -> usize {
        self.set.len()
    }

    /// Starting unknown vector from the guesses or the model seed.
    pub fn initial_unknowns(&self) -> DVector<f64> {
        let seed = self.model.seed(&self.set, self.a01, self.theta);
        let mut coeffs = seed.coeffs;
        if let Some(g) = &self.coeff_guess {
            coeffs.fill_from(g);
        }
        let omega = self.omega_guess.unwrap_or(seed.omega);
        pack(&coeffs.amplitudes, self.set.secular_position(), omega)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HbSolution {
    pub coeffs: CoefficientTable,
    pub omega: f64,
    pub drive: f64,
    pub beta: f64,
    pub a01: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
}

impl HbSolution {
    pub fn freqs(&self) -> FrequencyPair {
        FrequencyPair {
            omega: self.omega,
            drive: self.drive,
        }
    }

    /// `u(0)`.
    pub fn initial_position(&self) -> f64 {
        self.coeffs.position_at(0.0, &self.freqs())
    }
}

/// Free amplitudes (all but the secular one) followed by `ω`.
pub(crate) fn pack(amplitudes: &[f64], secular: usize, omega: f64) -> DVector<f64> {
    let mut v: Vec<f64> = amplitudes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != secular)
        .map(|(_, a)| *a)
        .collect();
    v.push(omega);
    DVector::from_vec(v)
}

/// Inverse of [`pack`] for the amplitude part.
pub(crate) fn unpack_coeffs(free: &[f64], secular: usize, a01: f64) -> DVector<f64> {
    let mut c = Vec::with_capacity(free.len() + 1);
    c.extend_from_slice(&free[..secular]);
    c.push(a01);
    c.extend_from_slice(&free[secular..]);
    DVector::from_vec(c)
}

/// Residual and derivative kernels for one block. Every row is multiplied
/// by `scale`.
pub(crate) struct BlockKernel<'a> {
    pub op: &'a MdftOperator,
    pub model: &'a dyn DriveModel,
    pub scale: f64,
}

impl BlockKernel<'_> {
    fn scale(&self) -> f64 {
        self.scale
    }

    fn sample_forces(&self, c: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let u = self.op.synthesize_raw(c);
        let phases = self.op.drive_phases();
        let mut f = DVector::zeros(u.len());
        for i in 0..u.len() {
            let v = self.model.accel(u[i], phases[i]);
            if !v.is_finite() {
                return Err(Error::NonFinite { u: u[i], phase: phases[i] });
            }
            f[i] = v;
        }
        Ok((u, f))
    }

    pub fn residual(&self, c: &DVector<f64>, omega: f64) -> Result<DVector<f64>> {
        let (_, f) = self.sample_forces(c)?;
        let d2 = self.op.d2_at(omega);
        let pf = self.op.analyze_raw(&f)?;
        Ok((d2.component_mul(c) - pf) * self.scale())
    }

    /// `∂R/∂c` over all columns (including the secular one).
    pub fn d_coeffs(&self, c: &DVector<f64>, omega: f64) -> Result<DMatrix<f64>> {
        let u = self.op.synthesize_raw(c);
        let phases = self.op.drive_phases();
        let mut ds = self.op.s_matrix().clone();
        for i in 0..u.len() {
            let fu = self.model.accel_du(u[i], phases[i]);
            if !fu.is_finite() {
                return Err(Error::NonFinite { u: u[i], phase: phases[i] });
            }
            ds.row_mut(i).scale_mut(fu);
        }
        let mut j = -(self.op.projector() * ds);
        let d2 = self.op.d2_at(omega);
        for i in 0..c.len() {
            j[(i, i)] += d2[i];
        }
        Ok(j * self.scale())
    }

    /// `∂R/∂ω = -2k(kω + mΩ)c`.
    pub fn d_omega(&self, c: &DVector<f64>, omega: f64) -> DVector<f64> {
        let drive = self.op.freqs().drive;
        let set = self.op.index_set();
        DVector::from_iterator(
            c.len(),
            set.entries().iter().zip(c.iter()).map(|(&(m, k), &a)| {
                let w = k as f64 * omega + m as f64 * drive;
                -2.0 * k as f64 * w * a * self.scale()
            }),
        )
    }

    /// `∂R/∂p = -P ∂F/∂p` for the model parameter with index `param`.
    pub fn d_param(&self, c: &DVector<f64>, param: usize) -> Result<DVector<f64>> {
        let u = self.op.synthesize_raw(c);
        let phases = self.op.drive_phases();
        let df = DVector::from_iterator(
            u.len(),
            (0..u.len()).map(|i| self.model.accel_dparam(param, u[i], phases[i])),
        );
        Ok(-self.op.analyze_raw(&df)? * self.scale())
    }
}

/// Forward system in the packed unknowns of [`pack`].
struct ForwardSystem<'a> {
    op: MdftOperator,
    model: &'a dyn DriveModel,
    a01: f64,
    secular: usize,
    scale: f64,
}

impl ForwardSystem<'_> {
    fn kernel(&self) -> BlockKernel<'_> {
        BlockKernel {
            op: &self.op,
            model: self.model,
            scale: self.scale,
        }
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = x.len();
        (
            unpack_coeffs(&x.as_slice()[..n - 1], self.secular, self.a01),
            x[n - 1],
        )
    }
}

impl NonlinearSystem for ForwardSystem<'_> {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (c, w) = self.split(x);
        self.kernel().residual(&c, w)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (c, w) = self.split(x);
        let k = self.kernel();
        let full = k.d_coeffs(&c, w)?;
        let n = c.len();
        let mut j = DMatrix::zeros(n, n);
        let mut col = 0;
        for i in 0..n {
            if i == self.secular {
                continue;
            }
            j.set_column(col, &full.column(i));
            col += 1;
        }
        j.set_column(n - 1, &k.d_omega(&c, w));
        Ok(j)
    }
}

/// Unscaled residual at the packed unknowns `[free amplitudes…, ω]`.
pub fn assemble_residual(problem: &ForwardProblem, unknowns: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(problem, unknowns)?;
    let sys = system(problem, 1.0)?;
    sys.residual(unknowns)
}

/// Analytic Jacobian at the packed unknowns.
pub fn jacobian(problem: &ForwardProblem, unknowns: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len(problem, unknowns)?;
    let sys = system(problem, 1.0)?;
    sys.jacobian(unknowns)
}

fn check_len(problem: &ForwardProblem, unknowns: &DVector<f64>) -> Result<()> {
    if unknowns.len() != problem.unknown_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.unknown_count(),
            got: unknowns.len(),
        });
    }
    Ok(())
}

fn system(problem: &ForwardProblem, scale: f64) -> Result<ForwardSystem<'_>> {
    problem.validate()?;
    let omega = problem
        .omega_guess
        .unwrap_or_else(|| problem.model.seed(&problem.set, problem.a01, problem.theta).omega);
    Ok(ForwardSystem {
        op: problem.operator(omega)?,
        model: problem.model.as_ref(),
        a01: problem.a01,
        secular: problem.set.secular_position(),
        scale,
    })
}

/// `dω/dp` along the solution branch through `sol` for each model
/// parameter index in `params`, from the implicit function theorem.
pub fn omega_sensitivity(problem: &ForwardProblem, sol: &HbSolution, params: &[usize]) -> Result<Vec<f64>> {
    let mut p = problem.clone();
    p.warm_start(sol);
    let sys = system(&p, 1.0 / p.a01)?;
    let x = p.initial_unknowns();
    let j = sys.jacobian(&x)?;
    let (c, _) = sys.split(&x);
    let lu = j.lu();
    params
        .iter()
        .map(|&i| {
            let rhs = -sys.kernel().d_param(&c, i)?;
            let dx = lu.solve(&rhs).ok_or(Error::SingularJacobian)?;
            Ok(dx[dx.len() - 1])
        })
        .collect()
}

/// Damped Newton solve. The iteration runs on the residual divided by
/// `A01`, and `residual_norm` reports that relative max-norm.
///
/// Without warm-start data the seed is carried up from small amplitude
/// according to `problem.seeding`; a cold seed at large amplitude can land
/// on a spurious near-resonant branch.
pub fn solve_forward(problem: &ForwardProblem) -> Result<HbSolution> {
    problem.validate()?;
    let cold = problem.omega_guess.is_none() && problem.coeff_guess.is_none();
    if let (true, Seeding::AmplitudeLadder { max_step }) = (cold, problem.seeding) {
        if max_step > 0.0 && problem.a01 > max_step {
            if let Some(sol) = ladder(problem, max_step) {
                return Ok(sol);
            }
        }
    }
    newton_solve(problem)
}

fn ladder(problem: &ForwardProblem, max_step: f64) -> Option<HbSolution> {
    let n = (problem.a01 / max_step).ceil() as usize;
    let mut work = problem.clone();
    let mut last = None;
    for i in 1..=n {
        work.a01 = if i == n { problem.a01 } else { problem.a01 * i as f64 / n as f64 };
        let sol = newton_solve(&work).ok()?;
        work.warm_start(&sol);
        last = Some(sol);
    }
    last
}

fn newton_solve(problem: &ForwardProblem) -> Result<HbSolution> {
    let sys = system(problem, 1.0 / problem.a01)?;
    let x0 = problem.initial_unknowns();
    let out = newton::solve(&sys, x0, &problem.options)?;
    let n = out.x.len();
    let omega = out.x[n - 1];
    let c = unpack_coeffs(&out.x.as_slice()[..n - 1], sys.secular, problem.a01);
    let drive = problem.model.drive_frequency();
    let sol = HbSolution {
        coeffs: CoefficientTable::new(problem.set.clone(), c.as_slice().to_vec(), problem.theta)?,
        omega,
        drive,
        beta: 2.0 * omega / drive,
        a01: problem.a01,
        residual_norm: out.residual_norm,
        iterations: out.iterations,
        converged: out.converged && omega > 0.0,
        residual_trace: out.trace,
    };
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged { best: Box::new(sol) })
    }
}

/// Max of `|u'' - F(u, Ωξ)| / A01` of the trial function on the real-time
/// diagonal, sampled at `n` points of `[0, xi_max]`. Unlike the collocation
/// residual this sees truncation and aliasing error.
pub fn diagonal_residual(sol: &HbSolution, model: &dyn DriveModel, xi_max: f64, n: usize) -> f64 {
    let f = sol.freqs();
    (0..=n)
        .map(|i| {
            let xi = xi_max * i as f64 / n.max(1) as f64;
            let r = sol.coeffs.acceleration_at(xi, &f) - model.accel(sol.coeffs.position_at(xi, &f), sol.drive * xi);
            r.abs() / sol.a01
        })
        .fold(0.0, f64::max)
}

#[derive(Debug)]
pub struct ContinuationPoint {
    pub value: f64,
    pub result: Result<HbSolution>,
}

/// Sequential warm-started solves over `values` of the parameter `param`.
///
/// The pseudo-parameter `a01` steps the secular amplitude. A failed point
/// is recorded and the next one restarts from the last converged solution.
pub fn continue_in_parameter(
    problem: &ForwardProblem,
    param: &str,
    values: &[f64],
) -> Result<Vec<ContinuationPoint>> {
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidInput("continuation values must be strictly monotone".into()));
    }
    let idx = if param == "a01" {
        None
    } else {
        Some(
            problem
                .model
                .param_index(param)
                .ok_or_else(|| Error::UnknownParam(param.to_string()))?,
        )
    };
    let mut work = problem.clone();
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        match idx {
            Some(i) => work.model.set_param(i, v)?,
            None => work.a01 = v,
        }
        let result = solve_forward(&work);
        if let Ok(sol) = &result {
            work.warm_start(sol);
        }
        out.push(ContinuationPoint { value: v, result });
    }
    Ok(out)
}

/// `u(ξ)` on the real-time diagonal `ξ = ζ`.
pub fn reconstruct_trajectory(sol: &HbSolution, xi: &[f64]) -> Vec<f64> {
    let f = sol.freqs();
    xi.iter().map(|&t| sol.coeffs.position_at(t, &f)).collect()
}
