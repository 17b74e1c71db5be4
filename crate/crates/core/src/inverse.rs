//! Stacked inverse system: control parameters, a shared base frequency
//! and one coefficient table per collocation amplitude, solved so that
//! every block's secular frequency follows the target amplitude-frequency
//! polynomial `ω(A) = ω₀(1 + Σ ε_k A^k)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{HarmonicIndexSet, MdftOperator, SamplingGrid};
use crate::error::{Error, Result};
use crate::hb::{self, BlockKernel, ForwardProblem, HbSolution, DEFAULT_OVERSAMPLING};
use crate::magnus;
use crate::models::{DriveModel, TargetPotential};
use crate::newton::{NewtonOptions, NonlinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSource {
    Direct,
    FromAnharmonicity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeFrequencyTarget {
    /// `k -> ε_k` for even `k`.
    pub eps: BTreeMap<u32, f64>,
    pub source: TargetSource,
    pub c_source: Option<TargetPotential>,
}

impl AmplitudeFrequencyTarget {
    pub fn direct(eps: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let eps: BTreeMap<u32, f64> = eps.into_iter().collect();
        for (&k, &e) in &eps {
            if k == 0 || k % 2 != 0 || !e.is_finite() {
                return Err(Error::InvalidInput(format!("invalid amplitude-frequency term eps_{k} = {e}")));
            }
        }
        Ok(Self {
            eps,
            source: TargetSource::Direct,
            c_source: None,
        })
    }

    /// `Σ ε_k A^k`.
    pub fn relative_shift(&self, amplitude: f64) -> f64 {
        self.eps.iter().map(|(&k, &e)| e * amplitude.powi(k as i32)).sum()
    }

    pub fn omega(&self, omega0: f64, amplitude: f64) -> f64 {
        omega0 * (1.0 + self.relative_shift(amplitude))
    }

    /// Same target with every `ε_k` multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let mut out = self.clone();
        for e in out.eps.values_mut() {
            *e *= t;
        }
        out
    }

    pub fn is_harmonic(&self) -> bool {
        self.eps.values().all(|&e| e == 0.0)
    }
}

/// First-order map `ε₂ = ¾C₄`, `ε₄ = 15/16 C₆`, `ε₆ = 35/32 C₈`.
pub fn eps_from_anharmonicity(target: &TargetPotential) -> Result<AmplitudeFrequencyTarget> {
    if !target.eps_coeffs.is_empty() {
        let mut t = AmplitudeFrequencyTarget::direct(target.eps_coeffs.clone())?;
        t.c_source = Some(target.clone());
        return Ok(t);
    }
    let mut eps = BTreeMap::new();
    for (&k, &c) in &target.c_coeffs {
        let factor = match k {
            4 => 3.0 / 4.0,
            6 => 15.0 / 16.0,
            8 => 35.0 / 32.0,
            _ => return Err(Error::UnsupportedOrder(k)),
        };
        if !c.is_finite() {
            return Err(Error::InvalidInput(format!("C_{k} is not finite")));
        }
        eps.insert(k - 2, factor * c);
    }
    Ok(AmplitudeFrequencyTarget {
        eps,
        source: TargetSource::FromAnharmonicity,
        c_source: Some(target.clone()),
    })
}

/// Warm-start data for the stacked solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSeed {
    pub omega0: f64,
    pub alpha: Vec<f64>,
    pub blocks: Vec<HbSolution>,
}

/// Default collocation ladder.
pub const DEFAULT_BLOCKS: [f64; 4] = [1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone)]
pub struct StackedInverseProblem {
    pub model: Box<dyn DriveModel>,
    pub controls: Vec<String>,
    pub blocks: Vec<f64>,
    pub theta: f64,
    pub set: HarmonicIndexSet,
    pub grid: SamplingGrid,
    pub target: AmplitudeFrequencyTarget,
    pub seed: Option<InverseSeed>,
    pub options: NewtonOptions,
    /// Try the perturbative control prediction as a seed when a cold
    /// start fails (single-control problems only).
    pub magnus_seed: bool,
    /// Caps every Newton step at `|Δα_i| ≤ cap · max(1, |α_i|)`.
    pub max_control_step: Option<f64>,
}

impl StackedInverseProblem {
    /// Uses the model's designated controls and the first `N_c + 1`
    /// amplitudes of the default ladder.
    pub fn new(model: Box<dyn DriveModel>, set: HarmonicIndexSet, target: AmplitudeFrequencyTarget) -> Self {
        let controls = model.controls().to_vec();
        let blocks = DEFAULT_BLOCKS.iter().copied().take(controls.len() + 1).collect();
        let grid = SamplingGrid::for_index_set(&set, DEFAULT_OVERSAMPLING);
        Self {
            model,
            controls,
            blocks,
            theta: 0.0,
            set,
            grid,
            target,
            seed: None,
            options: NewtonOptions::default(),
            magnus_seed: true,
            max_control_step: None,
        }
    }

    pub fn unknown_count(&self) -> usize {
        self.blocks.len() * (self.set.len() - 1) + 1 + self.controls.len()
    }

    pub fn equation_count(&self) -> usize {
        self.blocks.len() * self.set.len()
    }

    fn validate(&self) -> Result<Vec<usize>> {
        if self.blocks.len() != self.controls.len() + 1 {
            return Err(Error::CountMismatch {
                controls: self.controls.len(),
                expected: self.controls.len() + 1,
                got: self.blocks.len(),
            });
        }
        if self.blocks.iter().any(|&a| !(a > 0.0) || !a.is_finite())
            || self.blocks.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidInput(
                "collocation amplitudes must be positive and strictly increasing".into(),
            ));
        }
        let idx = self
            .controls
            .iter()
            .map(|c| self.model.param_index(c).ok_or_else(|| Error::UnknownParam(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(self.unknown_count(), self.equation_count());
        Ok(idx)
    }

    fn forward(&self, model: Box<dyn DriveModel>, a01: f64) -> ForwardProblem {
        let mut p = ForwardProblem::new(model, self.set.clone(), a01)
            .with_grid(self.grid)
            .with_theta(self.theta);
        p.options = self.options;
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution {
    pub controls: Vec<String>,
    pub alpha: Vec<f64>,
    pub omega0: f64,
    pub block_solutions: Vec<HbSolution>,
    pub residual_norm: f64,
    /// Max-norm residual of each block.
    pub block_residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
    /// Which seeding stage produced the solution.
    pub seeding: String,
}

impl InverseSolution {
    pub fn model_with_controls(&self, model: &dyn DriveModel) -> Result<Box<dyn DriveModel>> {
        let mut m = model.boxed_clone();
        for (name, &v) in self.controls.iter().zip(&self.alpha) {
            m.set_param_by_name(name, v)?;
        }
        Ok(m)
    }
}

struct StackedSystem<'a> {
    problem: &'a StackedInverseProblem,
    op: MdftOperator,
    control_idx: Vec<usize>,
    secular: usize,
    n: usize,
}

struct Unpacked {
    coeffs: Vec<DVector<f64>>,
    omega0: f64,
    alpha: Vec<f64>,
}

impl<'a> StackedSystem<'a> {
    fn new(problem: &'a StackedInverseProblem, control_idx: Vec<usize>) -> Result<Self> {
        let omega_any = 1.0;
        let fp = problem.forward(problem.model.boxed_clone(), problem.blocks[0]);
        Ok(Self {
            op: fp.operator(omega_any)?,
            problem,
            control_idx,
            secular: problem.set.secular_position(),
            n: problem.set.len(),
        })
    }

    fn unpack(&self, x: &DVector<f64>) -> Unpacked {
        let nb = self.problem.blocks.len();
        let free = self.n - 1;
        let coeffs = (0..nb)
            .map(|j| {
                hb::unpack_coeffs(&x.as_slice()[j * free..(j + 1) * free], self.secular, self.problem.blocks[j])
            })
            .collect();
        Unpacked {
            coeffs,
            omega0: x[nb * free],
            alpha: x.as_slice()[nb * free + 1..].to_vec(),
        }
    }

    fn pack(&self, coeffs: &[Vec<f64>], omega0: f64, alpha: &[f64]) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.problem.unknown_count());
        for c in coeffs {
            v.extend(c.iter().enumerate().filter(|(i, _)| *i != self.secular).map(|(_, a)| *a));
        }
        v.push(omega0);
        v.extend_from_slice(alpha);
        DVector::from_vec(v)
    }

    fn model_at(&self, alpha: &[f64]) -> Result<Box<dyn DriveModel>> {
        let mut m = self.problem.model.boxed_clone();
        for (&i, &v) in self.control_idx.iter().zip(alpha) {
            m.set_param(i, v)?;
        }
        Ok(m)
    }

    fn block_omega_factor(&self, j: usize) -> f64 {
        1.0 + self.problem.target.relative_shift(self.problem.blocks[j])
    }

    fn block_residuals(&self, u: &Unpacked) -> Result<Vec<DVector<f64>>> {
        let model = self.model_at(&u.alpha)?;
        (0..self.problem.blocks.len())
            .into_par_iter()
            .map(|j| {
                let k = BlockKernel {
                    op: &self.op,
                    model: model.as_ref(),
                    scale: 1.0 / self.problem.blocks[j],
                };
                k.residual(&u.coeffs[j], u.omega0 * self.block_omega_factor(j))
            })
            .collect()
    }
}

impl NonlinearSystem for StackedSystem<'_> {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.unpack(x);
        let parts = self.block_residuals(&u)?;
        let mut out = Vec::with_capacity(self.problem.equation_count());
        for p in parts {
            out.extend(p.iter());
        }
        Ok(DVector::from_vec(out))
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let u = self.unpack(x);
        let model = self.model_at(&u.alpha)?;
        let nb = self.problem.blocks.len();
        let free = self.n - 1;
        let total = self.problem.unknown_count();
        let blocks: Vec<(DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>)> = (0..nb)
            .into_par_iter()
            .map(|j| {
                let k = BlockKernel {
                    op: &self.op,
                    model: model.as_ref(),
                    scale: 1.0 / self.problem.blocks[j],
                };
                let fac = self.block_omega_factor(j);
                let w = u.omega0 * fac;
                let dc = k.d_coeffs(&u.coeffs[j], w)?;
                let dw = k.d_omega(&u.coeffs[j], w) * fac;
                let da = self
                    .control_idx
                    .iter()
                    .map(|&i| k.d_param(&u.coeffs[j], i))
                    .collect::<Result<Vec<_>>>()?;
                Ok((dc, dw, da))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut jac = DMatrix::zeros(total, total);
        for (j, (dc, dw, da)) in blocks.into_iter().enumerate() {
            let r0 = j * self.n;
            let mut col = j * free;
            for i in 0..self.n {
                if i == self.secular {
                    continue;
                }
                jac.view_mut((r0, col), (self.n, 1)).copy_from(&dc.column(i));
                col += 1;
            }
            jac.view_mut((r0, nb * free), (self.n, 1)).copy_from(&dw);
            for (a, d) in da.iter().enumerate() {
                jac.view_mut((r0, nb * free + 1 + a), (self.n, 1)).copy_from(d);
            }
        }
        Ok(jac)
    }
}

/// Stacked residual at `[block free amplitudes…, ω₀, α…]`.
pub fn assemble_stacked(problem: &StackedInverseProblem, unknowns: &DVector<f64>) -> Result<DVector<f64>> {
    let idx = problem.validate()?;
    if unknowns.len() != problem.unknown_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.unknown_count(),
            got: unknowns.len(),
        });
    }
    StackedSystem::new(problem, idx)?.residual(unknowns)
}

/// Analytic Jacobian of [`assemble_stacked`].
pub fn stacked_jacobian(problem: &StackedInverseProblem, unknowns: &DVector<f64>) -> Result<DMatrix<f64>> {
    let idx = problem.validate()?;
    if unknowns.len() != problem.unknown_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.unknown_count(),
            got: unknowns.len(),
        });
    }
    StackedSystem::new(problem, idx)?.jacobian(unknowns)
}

/// Unknown vector built from forward solves of every block at the
/// model's current control values, `ω₀` from the smallest block.
pub fn cold_start_unknowns(problem: &StackedInverseProblem) -> Result<DVector<f64>> {
    let idx = problem.validate()?;
    let sys = StackedSystem::new(problem, idx.clone())?;
    let alpha: Vec<f64> = idx.iter().map(|&i| problem.model.param(i).unwrap_or(0.0)).collect();
    let seed = forward_seed(problem, &alpha)?;
    Ok(sys.pack(
        &seed.blocks.iter().map(|b| b.coeffs.amplitudes.clone()).collect::<Vec<_>>(),
        seed.omega0,
        &seed.alpha,
    ))
}

fn forward_seed(problem: &StackedInverseProblem, alpha: &[f64]) -> Result<InverseSeed> {
    let blocks = solve_blocks(problem, alpha, None)?;
    Ok(InverseSeed {
        omega0: blocks[0].omega,
        alpha: alpha.to_vec(),
        blocks,
    })
}

fn model_at(problem: &StackedInverseProblem, alpha: &[f64]) -> Result<Box<dyn DriveModel>> {
    let mut model = problem.model.boxed_clone();
    for (name, &v) in problem.controls.iter().zip(alpha) {
        model.set_param_by_name(name, v)?;
    }
    Ok(model)
}

/// Forward solves of every block at fixed controls, warm-started from
/// `warm` when given.
fn solve_blocks(
    problem: &StackedInverseProblem,
    alpha: &[f64],
    warm: Option<&[HbSolution]>,
) -> Result<Vec<HbSolution>> {
    let model = model_at(problem, alpha)?;
    problem
        .blocks
        .par_iter()
        .enumerate()
        .map(|(j, &a)| {
            let mut fp = problem.forward(model.boxed_clone(), a);
            if let Some(w) = warm {
                fp.warm_start(&w[j]);
                if let Ok(s) = hb::solve_forward(&fp) {
                    return Ok(s);
                }
                fp.omega_guess = None;
                fp.coeff_guess = None;
            }
            hb::solve_forward(&fp)
        })
        .collect()
}

fn block_factor(problem: &StackedInverseProblem, a: f64) -> f64 {
    1.0 + problem.target.relative_shift(a)
}

/// `(ω_j/f_j) / (ω_0/f_0) - 1` for `j ≥ 1`, with `f_j = 1 + Σ ε_k A_j^k`.
fn reduced_residual(problem: &StackedInverseProblem, blocks: &[HbSolution]) -> DVector<f64> {
    let base = blocks[0].omega / block_factor(problem, blocks[0].a01);
    DVector::from_iterator(
        blocks.len() - 1,
        blocks[1..]
            .iter()
            .map(|b| b.omega / block_factor(problem, b.a01) / base - 1.0),
    )
}

fn solve_step(j: DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(dx) = j.clone().lu().solve(r) {
        if dx.iter().all(|v| v.is_finite()) {
            return Some(-dx);
        }
    }
    let svd = j.svd(true, true);
    let eps = 1e-15 * svd.singular_values.max();
    svd.solve(r, eps).ok().map(|dx| -dx)
}

/// Newton on the block-eliminated system. Forward solves at fixed `α`
/// eliminate the block coefficients and the ratio to block 0 eliminates
/// `ω₀`, leaving `(ω_j/f_j)/(ω_0/f_0) = 1` for `j ≥ 1` in the unknowns `α`,
/// with `f_j = 1 + Σ ε_k A_j^k`. The full stacked residual is evaluated at
/// the end and decides convergence.
fn run_stack(problem: &StackedInverseProblem, seed: &InverseSeed, stage: &str) -> Result<InverseSolution> {
    let idx = problem.validate()?;
    if seed.blocks.len() != problem.blocks.len() || seed.alpha.len() != problem.controls.len() {
        return Err(Error::InvalidInput("inverse seed does not match the problem shape".into()));
    }
    let mut alpha = seed.alpha.clone();
    let mut blocks = solve_blocks(problem, &alpha, Some(&seed.blocks))?;
    let mut g = reduced_residual(problem, &blocks);
    let mut trace = vec![g.amax()];
    let mut iterations = 0;
    let floor = 4.0 * f64::EPSILON;

    while !g.is_empty() && iterations < problem.options.max_iter && g.amax() > floor {
        let model = model_at(problem, &alpha)?;
        let sens = blocks
            .par_iter()
            .map(|b| hb::omega_sensitivity(&problem.forward(model.boxed_clone(), b.a01), b, &idx))
            .collect::<Result<Vec<_>>>()?;
        let f0 = block_factor(problem, blocks[0].a01);
        let base = blocks[0].omega / f0;
        let mut jac = DMatrix::zeros(blocks.len() - 1, idx.len());
        for j in 1..blocks.len() {
            let fj = block_factor(problem, blocks[j].a01);
            let ratio = blocks[j].omega / fj / base;
            for i in 0..idx.len() {
                jac[(j - 1, i)] = (sens[j][i] / fj - ratio * sens[0][i] / f0) / base;
            }
        }
        let Some(mut dx) = solve_step(jac, &g) else { break };
        if let Some(cap) = problem.max_control_step {
            let ratio = dx
                .iter()
                .zip(&alpha)
                .map(|(d, a)| d.abs() / (cap * a.abs().max(1.0)))
                .fold(0.0, f64::max);
            if ratio > 1.0 {
                dx /= ratio;
            }
        }
        let norm = g.norm();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=problem.options.max_halvings {
            let trial: Vec<f64> = alpha.iter().zip(dx.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok(bt) = solve_blocks(problem, &trial, Some(&blocks)) {
                let gt = reduced_residual(problem, &bt);
                if gt.norm() < norm {
                    accepted = Some((trial, bt, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((a, bt, gt)) = accepted else { break };
        alpha = a;
        blocks = bt;
        g = gt;
        iterations += 1;
        trace.push(g.amax());
    }
    let omega0 = blocks[0].omega / block_factor(problem, blocks[0].a01);

    let sys = StackedSystem::new(problem, idx)?;
    let x = sys.pack(
        &blocks.iter().map(|b| b.coeffs.amplitudes.clone()).collect::<Vec<_>>(),
        omega0,
        &alpha,
    );
    let r = sys.residual(&x)?;
    let block_residuals: Vec<f64> = (0..blocks.len()).map(|j| r.rows(j * sys.n, sys.n).amax()).collect();
    let residual_norm = r.amax();
    let converged = residual_norm <= problem.options.tol && omega0 > 0.0;
    for (j, b) in blocks.iter_mut().enumerate() {
        b.omega = omega0 * sys.block_omega_factor(j);
        b.beta = 2.0 * b.omega / b.drive;
        b.residual_norm = block_residuals[j];
    }
    if !converged {
        return Err(Error::InverseNotConverged {
            residual_norm,
            iterations,
            block_residuals,
        });
    }
    Ok(InverseSolution {
        controls: problem.controls.clone(),
        alpha,
        omega0,
        block_solutions: blocks,
        residual_norm,
        block_residuals,
        iterations,
        converged,
        residual_trace: trace,
        seeding: stage.to_string(),
    })
}

fn seed_from_solution(sol: &InverseSolution) -> InverseSeed {
    InverseSeed {
        omega0: sol.omega0,
        alpha: sol.alpha.clone(),
        blocks: sol.block_solutions.clone(),
    }
}

/// Solves the stacked system by block elimination: forward solves fix the
/// block coefficients, the ratio to block 0 fixes `ω₀`, and Newton runs on
/// `α` alone.
///
/// Seeding stages, tried in order until one converges: the supplied seed;
/// forward solves at the perturbatively predicted control (single control
/// only); forward solves at the model's current controls; a ladder that
/// scales the target from a quarter to its full value.
pub fn solve_inverse(problem: &StackedInverseProblem) -> Result<InverseSolution> {
    let idx = problem.validate()?;
    let mut last_err = None;

    if let Some(seed) = &problem.seed {
        match run_stack(problem, seed, "supplied") {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }

    if problem.magnus_seed && problem.controls.len() == 1 {
        if let Some(alpha) = magnus_prediction(problem) {
            if let Ok(seed) = forward_seed(problem, &[alpha]) {
                match run_stack(problem, &seed, "magnus") {
                    Ok(s) => return Ok(s),
                    Err(e) => last_err = Some(e),
                }
            }
        }
    }

    let alpha0: Vec<f64> = idx.iter().map(|&i| problem.model.param(i).unwrap_or(0.0)).collect();
    let cold = forward_seed(problem, &alpha0);
    if let Ok(seed) = &cold {
        match run_stack(problem, seed, "cold") {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }

    let mut seed = match cold {
        Ok(seed) => seed,
        Err(e) => return Err(last_err.unwrap_or(e)),
    };
    {
        let mut stepped = problem.clone();
        let mut reached = None;
        for t in [0.25, 0.5, 0.75, 1.0] {
            stepped.target = problem.target.scaled(t);
            match run_stack(&stepped, &seed, "target-ladder") {
                Ok(s) => {
                    seed = seed_from_solution(&s);
                    reached = Some(s);
                }
                Err(e) => {
                    last_err = Some(e);
                    reached = None;
                    break;
                }
            }
        }
        if let Some(mut s) = reached {
            s.seeding = "target-ladder".into();
            return Ok(s);
        }
    }

    Err(last_err.unwrap_or(Error::SingularJacobian))
}

/// Control value predicted for the lowest-order anharmonicity in the
/// target, when the target was given by anharmonicities.
fn magnus_prediction(problem: &StackedInverseProblem) -> Option<f64> {
    let c = problem.target.c_source.as_ref()?;
    let (&k, &ck) = c.c_coeffs.iter().next()?;
    magnus::predict_control(
        problem.model.as_ref(),
        &problem.controls[0],
        k,
        ck,
        None,
        magnus::DEFAULT_TRUNCATION_DEGREE,
    )
    .ok()
    .map(|p| p.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRow {
    pub amplitude: f64,
    pub target_shift: f64,
    pub achieved_shift: f64,
    /// `|achieved - target| / |target|`; `None` when the target shift is zero.
    pub rel_error: Option<f64>,
    pub omega: f64,
    pub converged: bool,
}

/// Forward-solves the optimized model at each amplitude and compares
/// `ω/ω₀ - 1` with the target polynomial.
pub fn verify_target(
    sol: &InverseSolution,
    problem: &StackedInverseProblem,
    amplitudes: &[f64],
) -> Result<Vec<VerificationRow>> {
    let model = sol.model_with_controls(problem.model.as_ref())?;
    amplitudes
        .par_iter()
        .map(|&a| {
            let mut p = problem.forward(model.boxed_clone(), a);
            if let Some(b) = sol
                .block_solutions
                .iter()
                .min_by(|x, y| (x.a01.ln() - a.ln()).abs().total_cmp(&(y.a01.ln() - a.ln()).abs()))
            {
                let scale = a / b.a01;
                let mut guess = b.coeffs.clone();
                for v in guess.amplitudes.iter_mut() {
                    *v *= scale;
                }
                p.coeff_guess = Some(guess);
                p.omega_guess = Some(b.omega);
            }
            let fwd = hb::solve_forward(&p).or_else(|_| {
                p.coeff_guess = None;
                p.omega_guess = None;
                hb::solve_forward(&p)
            })?;
            let target = problem.target.relative_shift(a);
            let achieved = fwd.omega / sol.omega0 - 1.0;
            Ok(VerificationRow {
                amplitude: a,
                target_shift: target,
                achieved_shift: achieved,
                rel_error: (target != 0.0).then(|| ((achieved - target) / target).abs()),
                omega: fwd.omega,
                converged: fwd.converged,
            })
        })
        .collect()
}

/// One point of an inverse continuation.
#[derive(Debug)]
pub struct InverseContinuationPoint {
    pub value: f64,
    pub result: Result<InverseSolution>,
}

/// Step cap applied by [`continue_inverse`] unless the problem sets one.
pub const CONTINUATION_STEP_CAP: f64 = 0.1;

/// Solves the inverse problem at each value of the model parameter `param`,
/// seeding each point from the last converged one. Control steps are
/// capped so that a point without a nearby solution fails instead of
/// landing on a distant branch. Failures are recorded and the sweep
/// continues.
pub fn continue_inverse(
    problem: &StackedInverseProblem,
    param: &str,
    values: &[f64],
) -> Result<Vec<InverseContinuationPoint>> {
    problem.validate()?;
    let pidx = problem
        .model
        .param_index(param)
        .ok_or_else(|| Error::UnknownParam(param.to_string()))?;
    if problem.controls.iter().any(|c| c == param) {
        return Err(Error::InvalidInput(format!("`{param}` is a control and cannot be swept")));
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidInput("sweep values must be strictly monotone".into()));
    }
    let mut work = problem.clone();
    work.max_control_step.get_or_insert(CONTINUATION_STEP_CAP);
    let mut last: Option<InverseSolution> = None;
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        work.model.set_param(pidx, v)?;
        work.seed = last.as_ref().map(|s| InverseSeed {
            omega0: s.omega0,
            alpha: s.alpha.clone(),
            blocks: s.block_solutions.clone(),
        });
        if let Some(s) = &last {
            for (name, &a) in s.controls.iter().zip(&s.alpha) {
                work.model.set_param_by_name(name, a)?;
            }
        }
        let result = solve_inverse(&work);
        if let Ok(s) = &result {
            last = Some(s.clone());
        }
        out.push(InverseContinuationPoint { value: v, result });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MathieuModel;
    use crate::oracles::{period_quadrature, SymmetricWell};

    /// Undriven quartic well `u'' = -u - 2α̃₄u³`, i.e. `C₄ = α̃₄`.
    fn quartic(alpha4: f64) -> MathieuModel {
        let mut m = MathieuModel::new(0.0, 1.0).with_alpha_dc(4, alpha4).unwrap();
        m.set_controls(vec!["alpha_dc_4".into()]).unwrap();
        m
    }

    fn small_trap() -> StackedInverseProblem {
        let set = HarmonicIndexSet::build(2, 3, false, 0.0).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, 0.4), (6, -0.2)])).unwrap();
        let mut m = MathieuModel::reference_trap();
        m.q = 0.3;
        m.set_controls(vec!["alpha_dc_4".into(), "alpha_dc_6".into()]).unwrap();
        let mut p = StackedInverseProblem::new(Box::new(m), set, target);
        p.blocks = vec![1e-2, 3e-2, 1e-1];
        p
    }

    /// Leading small-amplitude slope of `ω/ω₀ - 1` from exact quadrature.
    fn quadrature_slope(k: u32, c: f64, a: f64) -> f64 {
        let well = SymmetricWell::from_target(&TargetPotential::from_anharmonicities([(k, c)]), 1.0).unwrap();
        (period_quadrature(&well, a).unwrap() - 1.0) / a.powi(k as i32 - 2)
    }

    #[test]
    fn eps_map_matches_quadrature_slopes() {
        for (k, c, a) in [(4, 0.4, 1e-3), (6, -0.8, 1e-2), (8, 0.5, 3e-2)] {
            let t = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(k, c)])).unwrap();
            let eps = t.eps[&(k - 2)];
            let slope = quadrature_slope(k, c, a);
            assert!(((slope - eps) / eps).abs() < 5e-3, "C{k}: {slope} vs {eps}");
        }
    }

    #[test]
    fn unsupported_anharmonicity_order_is_rejected() {
        let err = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(10, 0.1)])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedOrder(10)));
    }

    #[test]
    fn direct_targets_pass_through() {
        let t = eps_from_anharmonicity(&TargetPotential::from_eps([(2, 0.3), (4, -0.1)])).unwrap();
        assert_eq!(t.source, TargetSource::Direct);
        assert!((t.relative_shift(0.1) - (0.3 * 0.01 - 0.1 * 1e-4)).abs() < 1e-18);
        assert!(AmplitudeFrequencyTarget::direct([(3, 0.1)]).is_err());
    }

    #[test]
    fn block_count_must_match_controls() {
        let mut p = small_trap();
        p.blocks.pop();
        assert!(matches!(
            solve_inverse(&p).unwrap_err(),
            Error::CountMismatch { controls: 2, expected: 3, got: 2 }
        ));
    }

    #[test]
    fn stacked_system_is_square() {
        let p = small_trap();
        assert_eq!(p.unknown_count(), p.equation_count());
        assert_eq!(p.equation_count(), 3 * p.set.len());
        let x = cold_start_unknowns(&p).unwrap();
        assert_eq!(x.len(), p.unknown_count());
        assert_eq!(assemble_stacked(&p, &x).unwrap().len(), p.equation_count());
    }

    #[test]
    fn stacked_jacobian_matches_finite_differences() {
        let p = small_trap();
        let mut x = cold_start_unknowns(&p).unwrap();
        let n = x.len();
        x[n - 2] += 0.05;
        x[n - 1] -= 0.03;
        let j = stacked_jacobian(&p, &x).unwrap();
        let mut worst = 0.0f64;
        for c in 0..n {
            let h = 1e-6 * x[c].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let fd = (assemble_stacked(&p, &xp).unwrap() - assemble_stacked(&p, &xm).unwrap()) / (2.0 * h);
            let col = j.column(c);
            worst = worst.max((col - &fd).amax() / col.amax().max(1.0));
        }
        assert!(worst < 1e-5, "worst relative column error {worst:e}");
    }

    #[test]
    fn recovers_quartic_control() {
        let set = HarmonicIndexSet::build(0, 5, false, 0.0).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, 0.4)])).unwrap();
        let p = StackedInverseProblem::new(Box::new(quartic(0.0)), set, target);
        let sol = solve_inverse(&p).unwrap();
        assert!(sol.converged && sol.residual_norm <= 1e-10);
        assert!((sol.alpha[0] - 0.4).abs() < 1e-6, "{}", sol.alpha[0]);
        assert!((sol.omega0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blocks_follow_the_target_polynomial() {
        let set = HarmonicIndexSet::build(0, 5, false, 0.0).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, -0.3)])).unwrap();
        let p = StackedInverseProblem::new(Box::new(quartic(0.1)), set, target.clone());
        let sol = solve_inverse(&p).unwrap();
        for b in &sol.block_solutions {
            assert!((b.omega - target.omega(sol.omega0, b.a01)).abs() < 1e-14);
        }
        let model = sol.model_with_controls(p.model.as_ref()).unwrap();
        for b in &sol.block_solutions {
            let fwd = hb::solve_forward(&p.forward(model.boxed_clone(), b.a01)).unwrap();
            assert!((fwd.omega - b.omega).abs() < 1e-12, "{} vs {}", fwd.omega, b.omega);
        }
    }

    #[test]
    fn harmonic_target_on_harmonic_model_keeps_zero_control() {
        let set = HarmonicIndexSet::build(0, 3, false, 0.0).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, 0.0)])).unwrap();
        let p = StackedInverseProblem::new(Box::new(quartic(0.0)), set, target);
        let sol = solve_inverse(&p).unwrap();
        assert!(sol.alpha[0].abs() < 1e-9);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        let set = HarmonicIndexSet::build(3, 3, false, 0.0).unwrap();
        let mut m = MathieuModel::reference_trap();
        m.q = 0.4;
        let p = ForwardProblem::new(Box::new(m.clone()), set.clone(), 0.05);
        let sol = hb::solve_forward(&p).unwrap();
        let i = m.param_index("alpha_dc_4").unwrap();
        let s = hb::omega_sensitivity(&p, &sol, &[i]).unwrap()[0];
        let h = 1e-5;
        let omega_at = |v: f64| {
            let mut mm = m.clone();
            mm.set_param(i, v).unwrap();
            let mut pp = ForwardProblem::new(Box::new(mm), set.clone(), 0.05);
            pp.warm_start(&sol);
            hb::solve_forward(&pp).unwrap().omega
        };
        let fd = (omega_at(h) - omega_at(-h)) / (2.0 * h);
        assert!((s - fd).abs() < 1e-6 * fd.abs().max(1e-3), "{s} vs {fd}");
    }

    #[test]
    fn verification_reproduces_collocation_points() {
        let set = HarmonicIndexSet::build(0, 5, false, 0.0).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, 0.4)])).unwrap();
        let p = StackedInverseProblem::new(Box::new(quartic(0.0)), set, target);
        let sol = solve_inverse(&p).unwrap();
        let rows = verify_target(&sol, &p, &[1e-5, 5e-5, 1e-4]).unwrap();
        for r in &rows {
            assert!(r.converged);
            assert!(r.rel_error.unwrap() < 1e-3, "{r:?}");
        }
    }
}
