//! Damped Newton iteration shared by the forward and stacked solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Max-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Extra full steps taken once `tol` is met, kept only if they reduce
    /// the residual.
    pub polish_steps: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 20,
            polish_steps: 2,
        }
    }
}

pub trait NonlinearSystem {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm residual before each step and after the last.
    pub trace: Vec<f64>,
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn newton_step(j: DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let n = r.len();
    if let Some(dx) = j.clone().lu().solve(r) {
        if dx.iter().all(|v| v.is_finite()) {
            return Ok(-dx);
        }
    }
    let svd = j.svd(true, true);
    let dx = svd
        .solve(r, 1e-14 * svd.singular_values.max())
        .map_err(|_| Error::SingularJacobian)?;
    if dx.len() != n || !dx.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    Ok(-dx)
}

/// Newton with backtracking on the Euclidean residual norm.
///
/// Never returns `Err` for plain non-convergence; the caller inspects
/// `converged`. Errors come from an initial residual that cannot be
/// evaluated.
pub fn solve<S: NonlinearSystem + ?Sized>(
    sys: &S,
    x0: DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let mut x = x0;
    let mut r = sys.residual(&x)?;
    let mut trace = vec![max_norm(&r)];
    let mut iterations = 0;
    let mut converged = max_norm(&r) <= opts.tol;
    let mut polish_left = opts.polish_steps;

    while iterations < opts.max_iter {
        if converged {
            if polish_left == 0 {
                break;
            }
            polish_left -= 1;
        }
        let j = match sys.jacobian(&x) {
            Ok(j) => j,
            Err(_) if converged => break,
            Err(e) => return Err(e),
        };
        let dx = match newton_step(j, &r) {
            Ok(dx) => dx,
            Err(_) => break,
        };
        let r2 = r.norm();
        let mut t = 1.0;
        let mut accepted = None;
        let halvings = if converged { 0 } else { opts.max_halvings };
        for _ in 0..=halvings {
            let trial = &x + &dx * t;
            if let Ok(rt) = sys.residual(&trial) {
                if rt.norm() < r2 {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, rn)) = accepted else { break };
        x = xn;
        r = rn;
        iterations += 1;
        trace.push(max_norm(&r));
        if max_norm(&r) <= opts.tol {
            converged = true;
        }
    }

    Ok(NewtonOutcome {
        residual_norm: max_norm(&r),
        x,
        residual: r,
        iterations,
        converged,
        trace,
    })
}
