//! Drive models: a drive-phase periodic acceleration `F(u, φ)` with named
//! parameters, some of which are designated as controls for the inverse
//! engine.
//!
//! All built-in driven models use the normalized time `ξ = Ωt/2`, so the
//! drive phase is `φ = 2ξ` and the drive frequency is `Ω = 2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Debug;

use crate::basis::{CoefficientTable, HarmonicIndexSet};
use crate::error::{Error, Result};
use crate::magnus::{FourierVectorField, PolyVectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Fixed,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub value: f64,
    pub role: ParamRole,
}

/// Initial iterate for a harmonic-balance solve.
#[derive(Debug, Clone)]
pub struct Seed {
    pub omega: f64,
    pub coeffs: CoefficientTable,
}

pub trait DriveModel: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Angular drive frequency in the model's time unit.
    fn drive_frequency(&self) -> f64 {
        2.0
    }

    fn accel(&self, u: f64, phase: f64) -> f64;

    /// Analytic `∂F/∂u`.
    fn accel_du(&self, u: f64, phase: f64) -> f64;

    /// Parameter names in a fixed order; indices refer to this order.
    fn param_names(&self) -> Vec<String>;

    fn param(&self, index: usize) -> Option<f64>;

    fn set_param(&mut self, index: usize, value: f64) -> Result<()>;

    /// Analytic `∂F/∂p` for parameter `index`.
    fn accel_dparam(&self, index: usize, u: f64, phase: f64) -> f64;

    /// Names of the parameters designated as controls.
    fn controls(&self) -> &[String];

    fn set_controls(&mut self, names: Vec<String>) -> Result<()>;

    fn seed(&self, set: &HarmonicIndexSet, a01: f64, theta: f64) -> Seed;

    /// Fourier modes of the phase-space field `[v, F(u, φ)]` truncated at
    /// polynomial degree `degree`, when the model admits them.
    fn fourier_modes(&self, _degree: u32) -> Option<FourierVectorField> {
        None
    }

    fn boxed_clone(&self) -> Box<dyn DriveModel>;

    fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| n == name)
    }

    fn param_by_name(&self, name: &str) -> Result<f64> {
        self.param_index(name)
            .and_then(|i| self.param(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    fn set_param_by_name(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .param_index(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        self.set_param(i, value)
    }

    fn params(&self) -> Vec<ParamInfo> {
        let controls = self.controls();
        self.param_names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| ParamInfo {
                value: self.param(i).unwrap_or(f64::NAN),
                role: if controls.contains(&name) {
                    ParamRole::Control
                } else {
                    ParamRole::Fixed
                },
                name,
            })
            .collect()
    }
}

impl Clone for Box<dyn DriveModel> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

fn check_controls(names: &[String], all: &[String]) -> Result<()> {
    for n in names {
        if !all.contains(n) {
            return Err(Error::UnknownParam(n.clone()));
        }
    }
    Ok(())
}

fn check_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("parameter {name} must be finite")))
    }
}

/// Even anharmonic orders carried by the Mathieu model.
pub const MATHIEU_ORDERS: [u32; 5] = [4, 6, 8, 10, 12];

/// Nonlinear Mathieu equation
/// `u'' = 2q cos φ (u + ½Σ k α_k^ac u^{k-1}) - a u - ½Σ k α̃_k^dc u^{k-1}`,
/// with `φ = 2ξ` and even `k >= 4` only.
#[derive(Debug, Clone, PartialEq)]
pub struct MathieuModel {
    pub q: f64,
    pub a: f64,
    pub alpha_ac: [f64; 5],
    pub alpha_dc: [f64; 5],
    controls: Vec<String>,
}

impl MathieuModel {
    pub fn new(q: f64, a: f64) -> Self {
        Self {
            q,
            a,
            alpha_ac: [0.0; 5],
            alpha_dc: [0.0; 5],
            controls: vec!["alpha_dc_4".into(), "alpha_dc_6".into(), "alpha_dc_8".into()],
        }
    }

    fn slot(k: u32) -> Result<usize> {
        MATHIEU_ORDERS
            .iter()
            .position(|&o| o == k)
            .ok_or(Error::UnsupportedOrder(k))
    }

    pub fn with_alpha_ac(mut self, k: u32, value: f64) -> Result<Self> {
        self.alpha_ac[Self::slot(k)?] = value;
        Ok(self)
    }

    pub fn with_alpha_dc(mut self, k: u32, value: f64) -> Result<Self> {
        self.alpha_dc[Self::slot(k)?] = value;
        Ok(self)
    }

    /// Trap parameters of the reference trajectory experiment:
    /// `q = 0.7`, `α₄ = -0.2`, `α₆ = -0.4`, `α₈ = 0.01`, no DC terms.
    pub fn reference_trap() -> Self {
        let mut m = Self::new(0.7, 0.0);
        m.alpha_ac[0] = -0.2;
        m.alpha_ac[1] = -0.4;
        m.alpha_ac[2] = 0.01;
        m
    }

    /// AC shape function `u + ½Σ k α_k^ac u^{k-1}`.
    pub fn ac_shape(&self, u: f64) -> f64 {
        u + anharmonic(u, &self.alpha_ac).0
    }
}

/// `½Σ k α_k u^{k-1}` and its `u`-derivative.
fn anharmonic(u: f64, alpha: &[f64; 5]) -> (f64, f64) {
    let u2 = u * u;
    let mut val = 0.0;
    let mut der = 0.0;
    let mut pow_km2 = u2; // u^{k-2}, starting at k = 4
    for (slot, &k) in MATHIEU_ORDERS.iter().enumerate() {
        let c = alpha[slot];
        if c != 0.0 {
            let kf = k as f64;
            val += 0.5 * kf * c * pow_km2 * u;
            der += 0.5 * kf * (kf - 1.0) * c * pow_km2;
        }
        pow_km2 *= u2;
    }
    (val, der)
}

const MATHIEU_FIXED: [&str; 2] = ["q", "a"];

impl DriveModel for MathieuModel {
    fn name(&self) -> &'static str {
        "mathieu"
    }

    fn accel(&self, u: f64, phase: f64) -> f64 {
        let (ac, _) = anharmonic(u, &self.alpha_ac);
        let (dc, _) = anharmonic(u, &self.alpha_dc);
        2.0 * self.q * phase.cos() * (u + ac) - self.a * u - dc
    }

    fn accel_du(&self, u: f64, phase: f64) -> f64 {
        let (_, ac) = anharmonic(u, &self.alpha_ac);
        let (_, dc) = anharmonic(u, &self.alpha_dc);
        2.0 * self.q * phase.cos() * (1.0 + ac) - self.a - dc
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = MATHIEU_FIXED.iter().map(|s| s.to_string()).collect();
        names.extend(MATHIEU_ORDERS.iter().map(|k| format!("alpha_ac_{k}")));
        names.extend(MATHIEU_ORDERS.iter().map(|k| format!("alpha_dc_{k}")));
        names
    }

    fn param(&self, index: usize) -> Option<f64> {
        match index {
            0 => Some(self.q),
            1 => Some(self.a),
            2..=6 => Some(self.alpha_ac[index - 2]),
            7..=11 => Some(self.alpha_dc[index - 7]),
            _ => None,
        }
    }

    fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        check_finite("mathieu", value)?;
        match index {
            0 => self.q = value,
            1 => self.a = value,
            2..=6 => self.alpha_ac[index - 2] = value,
            7..=11 => self.alpha_dc[index - 7] = value,
            _ => return Err(Error::UnknownParam(format!("#{index}"))),
        }
        Ok(())
    }

    fn accel_dparam(&self, index: usize, u: f64, phase: f64) -> f64 {
        match index {
            0 => 2.0 * phase.cos() * self.ac_shape(u),
            1 => -u,
            2..=6 => {
                let k = MATHIEU_ORDERS[index - 2] as i32;
                self.q * phase.cos() * k as f64 * u.powi(k - 1)
            }
            7..=11 => {
                let k = MATHIEU_ORDERS[index - 7] as i32;
                -0.5 * k as f64 * u.powi(k - 1)
            }
            _ => 0.0,
        }
    }

    fn controls(&self) -> &[String] {
        &self.controls
    }

    fn set_controls(&mut self, names: Vec<String>) -> Result<()> {
        check_controls(&names, &self.param_names())?;
        self.controls = names;
        Ok(())
    }

    /// Lowest-order Mathieu solution `A cos(βξ)(1 - (q/2) cos 2ξ)` with
    /// `β = √(a + q²/2)`.
    fn seed(&self, set: &HarmonicIndexSet, a01: f64, theta: f64) -> Seed {
        let b2 = self.a + 0.5 * self.q * self.q;
        let omega = if b2 > 0.0 { b2.sqrt() } else { 0.1 };
        let mut coeffs = CoefficientTable::zeros(set.clone(), theta);
        coeffs.set(0, 1, a01);
        coeffs.set(1, 1, -0.25 * self.q * a01);
        coeffs.set(-1, 1, -0.25 * self.q * a01);
        Seed { omega, coeffs }
    }

    fn fourier_modes(&self, degree: u32) -> Option<FourierVectorField> {
        let mut f0 = PolyVectorField::zero();
        f0.add_term(0, 0, 1, 1.0);
        f0.add_term(1, 1, 0, -self.a);
        let mut f1 = PolyVectorField::zero();
        f1.add_term(1, 1, 0, self.q);
        for (slot, &k) in MATHIEU_ORDERS.iter().enumerate() {
            if k - 1 > degree {
                continue;
            }
            let half_k = 0.5 * k as f64;
            f0.add_term(1, k - 1, 0, -half_k * self.alpha_dc[slot]);
            f1.add_term(1, k - 1, 0, self.q * half_k * self.alpha_ac[slot]);
        }
        Some(FourierVectorField::from_cosine_modes(vec![f0, f1]))
    }

    fn boxed_clone(&self) -> Box<dyn DriveModel> {
        Box::new(self.clone())
    }
}

/// Shaken optical lattice `u'' = -V₀ sin(2(u - λ cos φ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalLatticeModel {
    pub v0: f64,
    pub lambda: f64,
    controls: Vec<String>,
}

impl OpticalLatticeModel {
    pub fn new(v0: f64, lambda: f64) -> Self {
        Self {
            v0,
            lambda,
            controls: vec!["lambda".into()],
        }
    }
}

/// Bessel function of the first kind, integer order, via the periodic
/// trapezoid rule on its integral representation.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    const N: usize = 128;
    let h = 2.0 * PI / N as f64;
    let s: f64 = (0..N)
        .map(|i| {
            let t = i as f64 * h;
            (n as f64 * t - x * t.sin()).cos()
        })
        .sum();
    s / N as f64
}

impl DriveModel for OpticalLatticeModel {
    fn name(&self) -> &'static str {
        "lattice"
    }

    fn accel(&self, u: f64, phase: f64) -> f64 {
        -self.v0 * (2.0 * (u - self.lambda * phase.cos())).sin()
    }

    fn accel_du(&self, u: f64, phase: f64) -> f64 {
        -2.0 * self.v0 * (2.0 * (u - self.lambda * phase.cos())).cos()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["v0".into(), "lambda".into()]
    }

    fn param(&self, index: usize) -> Option<f64> {
        match index {
            0 => Some(self.v0),
            1 => Some(self.lambda),
            _ => None,
        }
    }

    fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        check_finite("lattice", value)?;
        match index {
            0 => self.v0 = value,
            1 => self.lambda = value,
            _ => return Err(Error::UnknownParam(format!("#{index}"))),
        }
        Ok(())
    }

    fn accel_dparam(&self, index: usize, u: f64, phase: f64) -> f64 {
        let arg = 2.0 * (u - self.lambda * phase.cos());
        match index {
            0 => -arg.sin(),
            1 => 2.0 * self.v0 * phase.cos() * arg.cos(),
            _ => 0.0,
        }
    }

    fn controls(&self) -> &[String] {
        &self.controls
    }

    fn set_controls(&mut self, names: Vec<String>) -> Result<()> {
        check_controls(&names, &self.param_names())?;
        self.controls = names;
        Ok(())
    }

    /// Harmonic limit with the shaking-averaged depth `V₀J₀(2λ)` and the
    /// first-harmonic amplitude correction `J₁(2A)/A`; the `k = 0` row is
    /// seeded with the linear forced response to the shaking.
    fn seed(&self, set: &HarmonicIndexSet, a01: f64, theta: f64) -> Seed {
        let j0 = bessel_j(0, 2.0 * self.lambda);
        let amp = if a01 > 1e-8 { bessel_j(1, 2.0 * a01) / a01 } else { 1.0 };
        let w2 = 2.0 * self.v0 * j0 * amp;
        let omega = if w2 > 0.0 { w2.sqrt() } else { (2.0 * self.v0).abs().sqrt().max(1e-3) };
        let mut coeffs = CoefficientTable::zeros(set.clone(), theta);
        coeffs.set(0, 1, a01);
        let w0 = 2.0 * self.v0 * j0;
        coeffs.set(1, 0, 2.0 * self.v0 * bessel_j(1, 2.0 * self.lambda) / (w0 - 4.0));
        Seed { omega, coeffs }
    }

    fn fourier_modes(&self, degree: u32) -> Option<FourierVectorField> {
        // cos(2λ cos φ) and sin(2λ cos φ) as cosine series in φ
        const N: usize = 256;
        const MAX_MODE: usize = 16;
        let z = 2.0 * self.lambda;
        let mut ccos = vec![0.0; MAX_MODE + 1];
        let mut csin = vec![0.0; MAX_MODE + 1];
        for i in 0..N {
            let phi = 2.0 * PI * i as f64 / N as f64;
            let w = z * phi.cos();
            for m in 0..=MAX_MODE {
                let c = (m as f64 * phi).cos() / N as f64;
                ccos[m] += w.cos() * c;
                csin[m] += w.sin() * c;
            }
        }
        let mut modes = Vec::new();
        for m in 0..=MAX_MODE {
            let mut f = PolyVectorField::zero();
            if m == 0 {
                f.add_term(0, 0, 1, 1.0);
            }
            // -V0 [sin 2u · C_m - cos 2u · S_m]
            let mut fact = 1.0;
            for j in 0..=degree {
                if j > 0 {
                    fact *= j as f64;
                }
                let t = 2f64.powi(j as i32) / fact;
                let sign = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
                let c = if j % 2 == 1 {
                    -self.v0 * sign * t * ccos[m]
                } else {
                    self.v0 * sign * t * csin[m]
                };
                if c.abs() > 1e-300 {
                    f.add_term(1, j, 0, c);
                }
            }
            modes.push(f);
        }
        while modes.len() > 1 && modes.last().is_some_and(|f| f.max_abs_coeff() < 1e-17) {
            modes.pop();
        }
        Some(FourierVectorField::from_cosine_modes(modes))
    }

    fn boxed_clone(&self) -> Box<dyn DriveModel> {
        Box::new(self.clone())
    }
}

/// Drive-free polynomial force `F(u) = Σ c_j u^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialModel {
    coeffs: BTreeMap<u32, f64>,
    names: Vec<String>,
}

impl PolynomialModel {
    pub fn new(terms: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let coeffs: BTreeMap<u32, f64> = terms.into_iter().collect();
        let names = coeffs.keys().map(|j| format!("c{j}")).collect();
        Self { coeffs, names }
    }

    /// `u'' = -u`.
    pub fn harmonic() -> Self {
        Self::new([(1, -1.0)])
    }

    /// `u'' = -u - εu³`.
    pub fn duffing(eps: f64) -> Self {
        Self::new([(1, -1.0), (3, -eps)])
    }

    pub fn coefficients(&self) -> &BTreeMap<u32, f64> {
        &self.coeffs
    }
}

impl DriveModel for PolynomialModel {
    fn name(&self) -> &'static str {
        "polynomial"
    }

    fn accel(&self, u: f64, _phase: f64) -> f64 {
        self.coeffs.iter().map(|(&j, c)| c * u.powi(j as i32)).sum()
    }

    fn accel_du(&self, u: f64, _phase: f64) -> f64 {
        self.coeffs
            .iter()
            .filter(|(&j, _)| j > 0)
            .map(|(&j, c)| c * j as f64 * u.powi(j as i32 - 1))
            .sum()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn param(&self, index: usize) -> Option<f64> {
        self.coeffs.values().nth(index).copied()
    }

    fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        check_finite("polynomial", value)?;
        let c = self
            .coeffs
            .values_mut()
            .nth(index)
            .ok_or_else(|| Error::UnknownParam(format!("#{index}")))?;
        *c = value;
        Ok(())
    }

    fn accel_dparam(&self, index: usize, u: f64, _phase: f64) -> f64 {
        self.coeffs
            .keys()
            .nth(index)
            .map_or(0.0, |&j| u.powi(j as i32))
    }

    fn controls(&self) -> &[String] {
        &[]
    }

    fn set_controls(&mut self, names: Vec<String>) -> Result<()> {
        match names.first() {
            Some(n) => Err(Error::InvalidInput(format!(
                "polynomial model has no designated controls (got {n})"
            ))),
            None => Ok(()),
        }
    }

    /// First-harmonic balance: `ω² = -Σ c_j b_j A^{j-1}` with `b_j` the
    /// `cos τ` coefficient of `cos^j τ`.
    fn seed(&self, set: &HarmonicIndexSet, a01: f64, theta: f64) -> Seed {
        let mut w2 = 0.0;
        for (&j, &c) in &self.coeffs {
            if j % 2 == 1 {
                let b = binomial(j, (j - 1) / 2) / 2f64.powi(j as i32 - 1);
                w2 -= c * b * a01.powi(j as i32 - 1);
            }
        }
        let omega = if w2 > 0.0 { w2.sqrt() } else { 1.0 };
        let mut coeffs = CoefficientTable::zeros(set.clone(), theta);
        coeffs.set(0, 1, a01);
        Seed { omega, coeffs }
    }

    fn fourier_modes(&self, degree: u32) -> Option<FourierVectorField> {
        let mut f0 = PolyVectorField::zero();
        f0.add_term(0, 0, 1, 1.0);
        for (&j, &c) in &self.coeffs {
            if j <= degree {
                f0.add_term(1, j, 0, c);
            }
        }
        Some(FourierVectorField::from_cosine_modes(vec![f0]))
    }

    fn boxed_clone(&self) -> Box<dyn DriveModel> {
        Box::new(self.clone())
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Plane pendulum `u'' = -w² sin u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumModel {
    pub w2: f64,
}

impl DriveModel for PendulumModel {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn accel(&self, u: f64, _phase: f64) -> f64 {
        -self.w2 * u.sin()
    }

    fn accel_du(&self, u: f64, _phase: f64) -> f64 {
        -self.w2 * u.cos()
    }

    fn param_names(&self) -> Vec<String> {
        vec!["w2".into()]
    }

    fn param(&self, index: usize) -> Option<f64> {
        (index == 0).then_some(self.w2)
    }

    fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        check_finite("pendulum", value)?;
        if index != 0 {
            return Err(Error::UnknownParam(format!("#{index}")));
        }
        self.w2 = value;
        Ok(())
    }

    fn accel_dparam(&self, index: usize, u: f64, _phase: f64) -> f64 {
        if index == 0 {
            -u.sin()
        } else {
            0.0
        }
    }

    fn controls(&self) -> &[String] {
        &[]
    }

    fn set_controls(&mut self, names: Vec<String>) -> Result<()> {
        if names.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput("pendulum model has no controls".into()))
        }
    }

    fn seed(&self, set: &HarmonicIndexSet, a01: f64, theta: f64) -> Seed {
        let amp = if a01 > 1e-8 { 2.0 * bessel_j(1, a01) / a01 } else { 1.0 };
        let mut coeffs = CoefficientTable::zeros(set.clone(), theta);
        coeffs.set(0, 1, a01);
        Seed {
            omega: (self.w2 * amp).abs().sqrt().max(1e-3),
            coeffs,
        }
    }

    fn boxed_clone(&self) -> Box<dyn DriveModel> {
        Box::new(self.clone())
    }
}

/// Target effective potential `U = ½ω₀²(u² + Σ C_k u^k)` by its
/// anharmonicities, or directly by the amplitude-frequency coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetPotential {
    pub c_coeffs: BTreeMap<u32, f64>,
    pub eps_coeffs: BTreeMap<u32, f64>,
}

impl TargetPotential {
    pub fn from_anharmonicities(c: impl IntoIterator<Item = (u32, f64)>) -> Self {
        Self {
            c_coeffs: c.into_iter().collect(),
            eps_coeffs: BTreeMap::new(),
        }
    }

    pub fn from_eps(eps: impl IntoIterator<Item = (u32, f64)>) -> Self {
        Self {
            c_coeffs: BTreeMap::new(),
            eps_coeffs: eps.into_iter().collect(),
        }
    }
}
