//! Ground-truth machinery independent of the harmonic-balance solver:
//! direct integration, trajectory deviations, linear Mathieu monodromy
//! and exact period quadrature.

mod dop853;
mod tableau;

use std::collections::BTreeMap;
use std::f64::consts::PI;

pub use dop853::{integrate_fixed, solve_dense, DenseSolution, DenseStep, Dop853, IntegratorConfig};

use crate::error::{Error, Result};
use crate::hb::HbSolution;
use crate::models::{DriveModel, PendulumModel, PolynomialModel, TargetPotential};

pub const DEFAULT_WINDOW: f64 = 200.0;
pub const DEFAULT_SAMPLES: usize = 4000;

/// A trajectory that can be queried at any time in its window.
pub trait Trajectory {
    fn position(&self, xi: f64) -> f64;
}

impl Trajectory for HbSolution {
    fn position(&self, xi: f64) -> f64 {
        self.coeffs.position_at(xi, &self.freqs())
    }
}

/// Integrated trajectory of `u'' = accel(u, Ωξ)`.
#[derive(Debug, Clone)]
pub struct ModelTrajectory {
    sol: DenseSolution<2>,
}

impl ModelTrajectory {
    pub fn state(&self, xi: f64) -> [f64; 2] {
        self.sol.eval(xi)
    }

    pub fn xi_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn dense(&self) -> &DenseSolution<2> {
        &self.sol
    }
}

impl Trajectory for ModelTrajectory {
    fn position(&self, xi: f64) -> f64 {
        self.sol.eval(xi)[0]
    }
}

pub fn integrate(
    model: &dyn DriveModel,
    u0: f64,
    v0: f64,
    xi_end: f64,
    cfg: IntegratorConfig,
) -> Result<ModelTrajectory> {
    let drive = model.drive_frequency();
    let rhs = |t: f64, y: &[f64; 2]| [y[1], model.accel(y[0], drive * t)];
    Ok(ModelTrajectory {
        sol: solve_dense(rhs, 0.0, [u0, v0], xi_end, cfg)?,
    })
}

/// `(u(0), u̇(0))` of the harmonic-balance trial function.
pub fn initial_state_from_solution(sol: &HbSolution) -> (f64, f64) {
    let f = sol.freqs();
    (sol.coeffs.position_at(0.0, &f), sol.coeffs.velocity_at(0.0, &f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    /// `(ξ, |Δu(ξ)/u(0)|)` on the uniform grid.
    pub samples: Vec<(f64, f64)>,
    pub max_dev: f64,
    pub xi_max: f64,
}

/// `|u_test(ξ) - u_ref(ξ)| / |u_ref(0)|` at `ξ_i = i·ξ_max/n`, `i = 1..=n`.
pub fn deviation(
    reference: &dyn Trajectory,
    test: &dyn Trajectory,
    xi_max: f64,
    n_samples: usize,
) -> Result<DeviationReport> {
    let u0 = reference.position(0.0);
    if u0 == 0.0 {
        return Err(Error::ZeroReference);
    }
    if n_samples == 0 || !(xi_max > 0.0) {
        return Err(Error::InvalidInput("deviation window must be non-empty".into()));
    }
    let samples: Vec<(f64, f64)> = (1..=n_samples)
        .map(|i| {
            let xi = xi_max * i as f64 / n_samples as f64;
            (xi, ((test.position(xi) - reference.position(xi)) / u0).abs())
        })
        .collect();
    let max_dev = samples.iter().fold(0.0f64, |m, s| m.max(s.1));
    Ok(DeviationReport {
        samples,
        max_dev,
        xi_max,
    })
}

/// Monodromy matrix of `u'' = (2q cos 2ξ - a) u` over one drive period.
pub fn monodromy(q: f64, a: f64) -> Result<[[f64; 2]; 2]> {
    let rhs = |t: f64, y: &[f64; 2]| [y[1], (2.0 * q * (2.0 * t).cos() - a) * y[0]];
    let cfg = IntegratorConfig {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        ..Default::default()
    };
    let mut cols = [[0.0; 2]; 2];
    for (j, y0) in [[1.0, 0.0], [0.0, 1.0]].into_iter().enumerate() {
        let sol = solve_dense(rhs, 0.0, y0, PI, cfg)?;
        cols[j] = sol.eval(PI);
    }
    Ok([[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]])
}

/// Normalized secular frequency `β = arccos(tr/2)/π` of the linear
/// Mathieu equation.
pub fn characteristic_exponent(q: f64, a: f64) -> Result<f64> {
    let m = monodromy(q, a)?;
    let half_trace = 0.5 * (m[0][0] + m[1][1]);
    if half_trace.abs() > 1.0 {
        return Err(Error::Unstable(half_trace.abs()));
    }
    Ok(half_trace.acos() / PI)
}

/// Even potential well `V(u)`, for the exact period integral.
#[derive(Debug, Clone, PartialEq)]
pub enum SymmetricWell {
    /// `V(u) = Σ v_j u^j` over even `j ≥ 2`.
    Polynomial(BTreeMap<u32, f64>),
    /// `V(u) = w²(1 - cos u)`.
    Cosine { w2: f64 },
}

impl SymmetricWell {
    /// `U = ½ω₀²(u² + Σ C_k u^k)`.
    pub fn from_target(target: &TargetPotential, omega0: f64) -> Result<Self> {
        let half = 0.5 * omega0 * omega0;
        let mut v = BTreeMap::from([(2, half)]);
        for (&k, &c) in &target.c_coeffs {
            if k % 2 != 0 || k < 4 {
                return Err(Error::InvalidInput(format!("C_{k} is not an even anharmonicity")));
            }
            *v.entry(k).or_insert(0.0) += half * c;
        }
        Ok(Self::Polynomial(v))
    }

    /// Well of a drive-free force `Σ c_j u^j` with odd `j` only.
    pub fn from_polynomial_model(model: &PolynomialModel) -> Result<Self> {
        let mut v = BTreeMap::new();
        for (&j, &c) in model.coefficients() {
            if j % 2 == 0 {
                return Err(Error::InvalidInput(format!(
                    "force term u^{j} breaks the well's symmetry"
                )));
            }
            v.insert(j + 1, -c / (j + 1) as f64);
        }
        Ok(Self::Polynomial(v))
    }

    pub fn from_pendulum(model: &PendulumModel) -> Self {
        Self::Cosine { w2: model.w2 }
    }

    fn dv(&self, u: f64) -> f64 {
        match self {
            Self::Polynomial(v) => v.iter().map(|(&j, &c)| j as f64 * c * u.powi(j as i32 - 1)).sum(),
            Self::Cosine { w2 } => w2 * u.sin(),
        }
    }

    /// `(V(A) - V(u)) / (A² - u²)`, free of cancellation.
    fn gap_quotient(&self, a: f64, u: f64) -> f64 {
        match self {
            Self::Polynomial(v) => v
                .iter()
                .map(|(&j, &c)| {
                    let (a2, u2) = (a * a, u * u);
                    let mut s = 0.0;
                    for i in 0..j / 2 {
                        s += a2.powi(i as i32) * u2.powi((j / 2 - 1 - i) as i32);
                    }
                    c * s
                })
                .sum(),
            Self::Cosine { w2 } => {
                let sinc = |x: f64| if x == 0.0 { 1.0 } else { x.sin() / x };
                0.5 * w2 * sinc(0.5 * (a + u)) * sinc(0.5 * (a - u))
            }
        }
    }
}

/// Exact angular frequency `2π/T(A)` of oscillation with turning point `A`.
///
/// With `u = A sin φ` the period becomes `∫₀^{2π} dφ / √(2W(A sin φ))`,
/// `W(u) = (V(A) - V(u))/(A² - u²)`, a smooth periodic integrand; the
/// trapezoid rule is refined until successive values agree.
pub fn period_quadrature(well: &SymmetricWell, amplitude: f64) -> Result<f64> {
    let a = amplitude.abs();
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidInput(format!("amplitude must be positive (got {amplitude})")));
    }
    let integrand = |phi: f64| -> Result<f64> {
        let u = a * phi.sin();
        if u > 0.0 && !(well.dv(u) > 0.0) {
            return Err(Error::NonMonotonic(a));
        }
        let w = well.gap_quotient(a, u);
        if !(w > 0.0) {
            return Err(Error::NonMonotonic(a));
        }
        Ok(1.0 / (2.0 * w).sqrt())
    };
    if !(well.dv(a) > 0.0) {
        return Err(Error::NonMonotonic(a));
    }
    let trapezoid = |n: usize| -> Result<f64> {
        let h = 2.0 * PI / n as f64;
        // Neumaier summation
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for i in 0..n {
            let x = integrand(i as f64 * h)?;
            let t = s + x;
            comp += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
            s = t;
        }
        Ok((s + comp) * h)
    };
    let mut n = 32;
    let mut prev = trapezoid(n)?;
    loop {
        n *= 2;
        let cur = trapezoid(n)?;
        if (cur - prev).abs() <= 4e-16 * cur || n >= 1 << 16 {
            return Ok(2.0 * PI / cur);
        }
        prev = cur;
    }
}

/// Mean period between `n_cycles + 1` successive downward zero crossings.
pub fn measure_period(
    model: &dyn DriveModel,
    u0: f64,
    v0: f64,
    n_cycles: usize,
    cfg: IntegratorConfig,
) -> Result<f64> {
    let drive = model.drive_frequency();
    let rhs = |t: f64, y: &[f64; 2]| [y[1], model.accel(y[0], drive * t)];
    let mut integ = Dop853::new(rhs, 0.0, [u0, v0], cfg)?;
    let mut crossings = Vec::new();
    while crossings.len() <= n_cycles {
        let step = integ.step(f64::INFINITY)?;
        let (a, b) = (step.eval(step.t0)[0], step.eval(step.t1())[0]);
        if a > 0.0 && b <= 0.0 {
            let (mut lo, mut hi) = (step.t0, step.t1());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if step.eval(mid)[0] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
        }
    }
    Ok((crossings[n_cycles] - crossings[0]) / n_cycles as f64)
}
