//! Second-order Floquet–Magnus effective force on polynomial phase-space
//! vector fields `ϕ = [u, v]`, and the perturbative control prediction
//! built on it.
//!
//! The drive is expanded as `F(ϕ, t) = Σ_m F_m(ϕ) e^{-imΩt}`. Only cosine
//! drives are supported (`F_{-m} = F_m`, real coefficients); for those the
//! first-order commutator sum vanishes identically.
//!
//! The bracket of the expansion is the commutator of the Liouville
//! generators. Writing it as `i` times the vector-field Lie bracket, each
//! double bracket picks up `i² = -1` relative to the plain Lie bracket.
//! This sign is pinned by the pseudopotential limit: the linear Mathieu
//! field `u'' = 2q cos(2ξ) u` must give `F_eff = -(q²/2) u`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::DriveModel;

/// Polynomial in `(u, v)`: `(power of u, power of v) -> coefficient`.
pub type Poly2 = BTreeMap<(u32, u32), f64>;

/// Two-component polynomial vector field on the phase plane.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolyVectorField {
    components: [Poly2; 2],
}

fn poly_add_scaled(acc: &mut Poly2, p: &Poly2, scale: f64) {
    for (&key, &c) in p {
        let e = acc.entry(key).or_insert(0.0);
        *e += scale * c;
        if *e == 0.0 {
            acc.remove(&key);
        }
    }
}

fn poly_mul(a: &Poly2, b: &Poly2) -> Poly2 {
    let mut out = Poly2::new();
    for (&(au, av), &ca) in a {
        for (&(bu, bv), &cb) in b {
            let e = out.entry((au + bu, av + bv)).or_insert(0.0);
            *e += ca * cb;
        }
    }
    out.retain(|_, c| *c != 0.0);
    out
}

/// Partial derivative along `u` (`var = 0`) or `v` (`var = 1`).
fn poly_diff(p: &Poly2, var: usize) -> Poly2 {
    let mut out = Poly2::new();
    for (&(pu, pv), &c) in p {
        let (n, key) = if var == 0 {
            (pu, (pu.wrapping_sub(1), pv))
        } else {
            (pv, (pu, pv.wrapping_sub(1)))
        };
        if n > 0 {
            *out.entry(key).or_insert(0.0) += c * n as f64;
        }
    }
    out
}

impl PolyVectorField {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_components(u: Poly2, v: Poly2) -> Self {
        let mut f = Self { components: [u, v] };
        for c in &mut f.components {
            c.retain(|_, x| *x != 0.0);
        }
        f
    }

    /// Adds `c · u^pu v^pv` to component `comp` (0 = u̇, 1 = v̇).
    pub fn add_term(&mut self, comp: usize, pu: u32, pv: u32, c: f64) {
        let e = self.components[comp].entry((pu, pv)).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.components[comp].remove(&(pu, pv));
        }
    }

    pub fn component(&self, comp: usize) -> &Poly2 {
        &self.components[comp]
    }

    pub fn coeff(&self, comp: usize, pu: u32, pv: u32) -> f64 {
        self.components[comp].get(&(pu, pv)).copied().unwrap_or(0.0)
    }

    /// Maximum total degree over both components (0 for the zero field).
    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .flat_map(|c| c.keys())
            .map(|&(a, b)| a + b)
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_empty())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.values())
            .fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = Self::zero();
        out.add_scaled(self, s);
        out
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for i in 0..2 {
            poly_add_scaled(&mut self.components[i], &other.components[i], s);
        }
    }

    /// `[f, g]_i = Σ_j (f_j ∂_j g_i - g_j ∂_j f_i)`.
    pub fn lie_bracket(&self, g: &Self) -> Self {
        let f = self;
        let mut out = Self::zero();
        for i in 0..2 {
            let mut acc = Poly2::new();
            for j in 0..2 {
                let dg = poly_diff(&g.components[i], j);
                let df = poly_diff(&f.components[i], j);
                poly_add_scaled(&mut acc, &poly_mul(&f.components[j], &dg), 1.0);
                poly_add_scaled(&mut acc, &poly_mul(&g.components[j], &df), -1.0);
            }
            acc.retain(|_, c| *c != 0.0);
            out.components[i] = acc;
        }
        out
    }
}

/// Fourier modes `m -> F_m` of a time-periodic polynomial field.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FourierVectorField {
    modes: BTreeMap<i32, PolyVectorField>,
}

impl FourierVectorField {
    /// Cosine drive from `[F_0, F_1, F_2, ...]`; sets `F_{-m} = F_m`.
    pub fn from_cosine_modes(modes: Vec<PolyVectorField>) -> Self {
        let mut map = BTreeMap::new();
        for (m, f) in modes.into_iter().enumerate() {
            let m = m as i32;
            if m != 0 {
                map.insert(-m, f.clone());
            }
            map.insert(m, f);
        }
        Self { modes: map }
    }

    pub fn from_modes(modes: BTreeMap<i32, PolyVectorField>) -> Self {
        Self { modes }
    }

    pub fn mode(&self, m: i32) -> Option<&PolyVectorField> {
        self.modes.get(&m)
    }

    pub fn modes(&self) -> &BTreeMap<i32, PolyVectorField> {
        &self.modes
    }

    fn is_cosine(&self) -> bool {
        self.modes
            .iter()
            .all(|(m, f)| self.modes.get(&-m).is_some_and(|g| g == f))
    }
}

/// Time-independent effective force `F_eff(u) = -(c₂u + c₄'u³ + c₆'u⁵ + c₈'u⁷ + …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveForcePolynomial {
    /// Coefficients `d_j` of `F_eff(u) = Σ d_j u^j`.
    pub force: BTreeMap<u32, f64>,
    pub c2: f64,
    pub c4p: f64,
    pub c6p: f64,
    pub c8p: f64,
    /// Largest even-power coefficient magnitude; zero for parity-symmetric input.
    pub even_residual: f64,
}

impl EffectiveForcePolynomial {
    fn from_force(force: BTreeMap<u32, f64>) -> Self {
        let d = |j: u32| force.get(&j).copied().unwrap_or(0.0);
        let even_residual = force
            .iter()
            .filter(|(j, _)| *j % 2 == 0)
            .fold(0.0f64, |m, (_, c)| m.max(c.abs()));
        Self {
            c2: -d(1),
            c4p: -d(3),
            c6p: -d(5),
            c8p: -d(7),
            even_residual,
            force,
        }
    }

    pub fn omega0_sq(&self) -> f64 {
        self.c2
    }

    /// Normalized secular frequency `2√c₂/Ω`.
    pub fn beta(&self, drive: f64) -> f64 {
        2.0 * self.c2.sqrt() / drive
    }

    /// `C₄ = c₄'/(2c₂)`, `C₆ = c₆'/(3c₂)`, `C₈ = c₈'/(4c₂)`.
    pub fn anharmonicities(&self) -> Result<BTreeMap<u32, f64>> {
        if !(self.c2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "effective potential is not confining (c2 = {})",
                self.c2
            )));
        }
        Ok(BTreeMap::from([
            (4, self.c4p / (2.0 * self.c2)),
            (6, self.c6p / (3.0 * self.c2)),
            (8, self.c8p / (4.0 * self.c2)),
        ]))
    }

    pub fn anharmonicity(&self, k: u32) -> Result<f64> {
        self.anharmonicities()?
            .get(&k)
            .copied()
            .ok_or(Error::UnsupportedOrder(k))
    }
}

/// Relative tolerance for the canonical-form check on `u̇ = v`.
const CANONICAL_TOL: f64 = 1e-12;

/// Sign of the double-bracket terms relative to the plain Lie bracket.
const DOUBLE_BRACKET_SIGN: f64 = -1.0;

/// Effective field truncated after the `Ω⁻²` terms.
pub fn effective_field_2nd_order(f: &FourierVectorField, drive: f64) -> Result<PolyVectorField> {
    let f0 = f
        .mode(0)
        .ok_or_else(|| Error::InvalidInput("Fourier field has no m = 0 mode".into()))?;
    if !f.is_cosine() {
        return Err(Error::InvalidInput(
            "only cosine drives (F_-m = F_m) are supported".into(),
        ));
    }
    let mut eff = f0.clone();
    let nonzero: Vec<i32> = f.modes().keys().copied().filter(|&m| m != 0).collect();

    for &m in &nonzero {
        let mf = m as f64;
        let fm = &f.modes()[&m];
        let fmm = &f.modes()[&-m];
        // first order: vanishes term by term for cosine drives
        let first = fmm.lie_bracket(fm);
        eff.add_scaled(&first, 1.0 / (2.0 * mf * drive));

        let inner = f0.lie_bracket(fm);
        let outer = fmm.lie_bracket(&inner);
        eff.add_scaled(&outer, DOUBLE_BRACKET_SIGN / (2.0 * (mf * drive).powi(2)));

        for &n in &nonzero {
            if n == m {
                continue;
            }
            let Some(fnm) = f.mode(n - m) else { continue };
            let inner = fnm.lie_bracket(fm);
            if inner.is_zero() {
                continue;
            }
            let outer = f.modes()[&-n].lie_bracket(&inner);
            eff.add_scaled(
                &outer,
                DOUBLE_BRACKET_SIGN / (3.0 * n as f64 * mf * drive * drive),
            );
        }
    }
    Ok(eff)
}

/// Second-order effective force, checked to be of the form `[v, F_eff(u)]`.
pub fn effective_force_2nd_order(
    f: &FourierVectorField,
    drive: f64,
) -> Result<EffectiveForcePolynomial> {
    let eff = effective_field_2nd_order(f, drive)?;
    let scale = eff.max_abs_coeff().max(1.0);
    for (&(pu, pv), &c) in eff.component(0) {
        let expect = if (pu, pv) == (0, 1) { 1.0 } else { 0.0 };
        if (c - expect).abs() > CANONICAL_TOL * scale {
            return Err(Error::NonCanonical(format!(
                "first component has term {c} u^{pu} v^{pv}"
            )));
        }
    }
    if (eff.coeff(0, 0, 1) - 1.0).abs() > CANONICAL_TOL {
        return Err(Error::NonCanonical("first component is not v".into()));
    }
    let mut force = BTreeMap::new();
    for (&(pu, pv), &c) in eff.component(1) {
        if pv != 0 {
            if c.abs() > CANONICAL_TOL * scale {
                return Err(Error::NonCanonical(format!(
                    "effective force depends on velocity (term {c} u^{pu} v^{pv})"
                )));
            }
            continue;
        }
        force.insert(pu, c);
    }
    Ok(EffectiveForcePolynomial::from_force(force))
}

/// Default polynomial truncation for non-polynomial drives.
pub const DEFAULT_TRUNCATION_DEGREE: u32 = 9;

/// Effective force of a model at its current parameters.
pub fn model_effective_force(
    model: &dyn DriveModel,
    degree: u32,
) -> Result<EffectiveForcePolynomial> {
    let modes = model.fourier_modes(degree).ok_or_else(|| {
        Error::InvalidInput(format!("model {} has no polynomial Fourier modes", model.name()))
    })?;
    effective_force_2nd_order(&modes, model.drive_frequency())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPrediction {
    pub control: String,
    pub value: f64,
    pub beta: f64,
    pub anharmonicities: BTreeMap<u32, f64>,
}

/// Search interval used when the caller does not supply one.
pub fn default_control_bracket(model: &dyn DriveModel, control: &str) -> (f64, f64) {
    match (model.name(), control) {
        ("lattice", "lambda") => (0.0, 1.2),
        _ => (-5.0, 5.0),
    }
}

/// Solves `C_k(control) = target` on the second-order effective force.
///
/// The bracket is scanned on a uniform grid; among the sign changes the
/// one closest to the model's current control value is refined.
pub fn predict_control(
    model: &dyn DriveModel,
    control: &str,
    order: u32,
    target: f64,
    bracket: Option<(f64, f64)>,
    degree: u32,
) -> Result<ControlPrediction> {
    let idx = model
        .param_index(control)
        .ok_or_else(|| Error::UnknownParam(control.to_string()))?;
    let start = model.param(idx).unwrap_or(0.0);
    let (lo, hi) = bracket.unwrap_or_else(|| default_control_bracket(model, control));
    let mut work = model.boxed_clone();
    let mut gap = |x: f64| -> Result<f64> {
        work.set_param(idx, x)?;
        let eff = model_effective_force(work.as_ref(), degree)?;
        Ok(eff.anharmonicity(order)? - target)
    };

    const SCAN: usize = 96;
    let xs: Vec<f64> = (0..=SCAN)
        .map(|i| lo + (hi - lo) * i as f64 / SCAN as f64)
        .collect();
    let mut vals = Vec::with_capacity(xs.len());
    for &x in &xs {
        vals.push(gap(x).ok());
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..SCAN {
        let (Some(ya), Some(yb)) = (vals[i], vals[i + 1]) else { continue };
        if ya == 0.0 || ya.signum() != yb.signum() {
            let mid = 0.5 * (xs[i] + xs[i + 1]);
            if best.is_none_or(|b| (mid - start).abs() < (0.5 * (b.0 + b.2) - start).abs()) {
                best = Some((xs[i], ya, xs[i + 1], yb));
            }
        }
    }
    if vals[SCAN] == Some(0.0) && best.is_none() {
        best = Some((xs[SCAN], 0.0, xs[SCAN], 0.0));
    }
    let (mut a, mut fa, mut b, mut fb) = best.ok_or(Error::NoRoot { lo, hi })?;
    let root = if fa == 0.0 {
        a
    } else if fb == 0.0 {
        b
    } else {
        // Illinois false position
        let mut side = 0i32;
        let mut c = a;
        for _ in 0..200 {
            c = (a * fb - b * fa) / (fb - fa);
            let fc = gap(c)?;
            if fc == 0.0 || (b - a).abs() < 1e-15 * (1.0 + c.abs()) {
                break;
            }
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            }
        }
        c
    };
    work.set_param(idx, root)?;
    let eff = model_effective_force(work.as_ref(), degree)?;
    Ok(ControlPrediction {
        control: control.to_string(),
        value: root,
        beta: eff.beta(work.drive_frequency()),
        anharmonicities: eff.anharmonicities()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MathieuModel, OpticalLatticeModel};

    fn field(u_terms: &[(u32, u32, f64)], v_terms: &[(u32, u32, f64)]) -> PolyVectorField {
        let mut f = PolyVectorField::zero();
        for &(a, b, c) in u_terms {
            f.add_term(0, a, b, c);
        }
        for &(a, b, c) in v_terms {
            f.add_term(1, a, b, c);
        }
        f
    }

    /// Integer-coefficient cubic field from a small deterministic generator.
    fn int_cubic(seed: u64) -> PolyVectorField {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut f = PolyVectorField::zero();
        for comp in 0..2 {
            for pu in 0..=3u32 {
                for pv in 0..=(3 - pu) {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let c = ((s >> 33) % 9) as i64 - 4;
                    f.add_term(comp, pu, pv, c as f64);
                }
            }
        }
        f
    }

    #[test]
    fn bracket_is_antisymmetric_and_nilpotent() {
        let f = int_cubic(1);
        let g = int_cubic(2);
        assert!(f.lie_bracket(&f).is_zero());
        let mut sum = f.lie_bracket(&g);
        sum.add_scaled(&g.lie_bracket(&f), 1.0);
        assert!(sum.is_zero());
    }

    #[test]
    fn jacobi_identity_is_exact() {
        for seed in 0..5 {
            let (f, g, h) = (int_cubic(3 * seed), int_cubic(3 * seed + 1), int_cubic(3 * seed + 2));
            let mut total = f.lie_bracket(&g.lie_bracket(&h));
            total.add_scaled(&g.lie_bracket(&h.lie_bracket(&f)), 1.0);
            total.add_scaled(&h.lie_bracket(&f.lie_bracket(&g)), 1.0);
            assert!(total.is_zero(), "residual {:?}", total);
        }
    }

    #[test]
    fn linear_fields_reduce_to_matrix_commutator() {
        // f = A x, g = B x  =>  [f, g] = (B A - A B) x
        let a = [[1.0, 2.0], [-3.0, 0.5]];
        let b = [[0.0, -1.0], [4.0, 2.0]];
        let lin = |m: [[f64; 2]; 2]| {
            field(&[(1, 0, m[0][0]), (0, 1, m[0][1])], &[(1, 0, m[1][0]), (0, 1, m[1][1])])
        };
        let br = lin(a).lie_bracket(&lin(b));
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    c[i][j] += b[i][k] * a[k][j] - a[i][k] * b[k][j];
                }
            }
        }
        for i in 0..2 {
            assert_eq!(br.coeff(i, 1, 0), c[i][0]);
            assert_eq!(br.coeff(i, 0, 1), c[i][1]);
        }
    }

    #[test]
    fn linear_mathieu_gives_pseudopotential() {
        for &(q, a) in &[(0.05, 0.0), (0.3, 0.0), (0.2, 0.01)] {
            let modes = MathieuModel::new(q, a).fourier_modes(11).unwrap();
            let eff = effective_force_2nd_order(&modes, 2.0).unwrap();
            assert!((eff.c2 - (a + q * q / 2.0)).abs() < 1e-15);
            assert!((eff.beta(2.0) - (a + q * q / 2.0).sqrt()).abs() < 1e-15);
            assert_eq!(eff.force.len(), 1);
        }
    }

    #[test]
    fn cosine_drive_first_order_vanishes() {
        let modes = MathieuModel::reference_trap().fourier_modes(11).unwrap();
        let f1 = modes.mode(1).unwrap();
        assert!(modes.mode(-1).unwrap().lie_bracket(f1).is_zero());
    }

    #[test]
    fn sine_drive_is_rejected() {
        let mut modes = BTreeMap::new();
        modes.insert(0, field(&[(0, 1, 1.0)], &[(1, 0, -1.0)]));
        modes.insert(1, field(&[], &[(1, 0, 0.5)]));
        modes.insert(-1, field(&[], &[(1, 0, -0.5)]));
        assert!(effective_force_2nd_order(&FourierVectorField::from_modes(modes), 2.0).is_err());
    }

    #[test]
    fn non_canonical_field_is_flagged() {
        let f0 = field(&[(0, 1, 1.0), (1, 0, 0.3)], &[(1, 0, -1.0)]);
        let modes = FourierVectorField::from_cosine_modes(vec![f0]);
        assert!(matches!(
            effective_force_2nd_order(&modes, 2.0),
            Err(Error::NonCanonical(_))
        ));
    }

    #[test]
    fn trap_c4_closed_form() {
        // C4 = (2 α̃4 + 4 q² α4) / q² from -(q²/2) g g' with g = u + 2α4 u³ + …
        let q = 0.3;
        let m = MathieuModel::reference_trap();
        let mut m = m;
        m.q = q;
        m.alpha_dc[0] = 0.07;
        let eff = model_effective_force(&m, 11).unwrap();
        let expect = (2.0 * 0.07 + 4.0 * q * q * -0.2) / (q * q);
        assert!((eff.anharmonicity(4).unwrap() - expect).abs() < 1e-13);
        assert_eq!(eff.even_residual, 0.0);
    }

    #[test]
    fn c4_is_affine_in_dc_control() {
        let eval = |x: f64| {
            let mut m = MathieuModel::reference_trap();
            m.alpha_dc[0] = x;
            model_effective_force(&m, 11).unwrap().anharmonicity(4).unwrap()
        };
        let (c0, c1, c3) = (eval(-0.4), eval(0.1), eval(1.1));
        let interp = c0 + (c3 - c0) * (0.1 + 0.4) / 1.5;
        assert!((interp - c1).abs() < 1e-12 * c1.abs().max(1.0));
    }

    #[test]
    fn trap_prediction_matches_closed_form() {
        let mut m = MathieuModel::reference_trap();
        for q in [0.05, 0.7] {
            m.q = q;
            let p = predict_control(&m, "alpha_dc_4", 4, 0.4, None, 11).unwrap();
            assert!((p.value - 0.6 * q * q).abs() < 1e-12, "{} vs {}", p.value, 0.6 * q * q);
        }
    }

    #[test]
    fn zero_target_on_harmonic_model_predicts_zero() {
        let m = MathieuModel::new(0.3, 0.0);
        let p = predict_control(&m, "alpha_dc_4", 4, 0.0, None, 11).unwrap();
        assert!(p.value.abs() < 1e-14);
    }

    #[test]
    fn lattice_truncation_is_stable() {
        let mut m = OpticalLatticeModel::new(0.2, 0.4);
        let c9 = model_effective_force(&m, 9).unwrap().anharmonicity(4).unwrap();
        let c11 = model_effective_force(&m, 11).unwrap().anharmonicity(4).unwrap();
        assert!((c9 - c11).abs() <= 1e-3 * c11.abs());
        // undriven lattice: -V0 sin 2u gives C4 = -1/3 at zeroth order
        m.lambda = 0.0;
        let eff = model_effective_force(&m, 9).unwrap();
        assert!((eff.c2 - 0.4).abs() < 1e-15);
        assert!((eff.anharmonicity(4).unwrap() + 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(eff.even_residual, 0.0);
    }

    #[test]
    fn lattice_prediction_reaches_target() {
        let m = OpticalLatticeModel::new(0.2, 0.0);
        let p = predict_control(&m, "lambda", 4, 0.8, None, 9).unwrap();
        assert!(p.value > 0.0 && p.value < 1.2);
        assert!((p.anharmonicities[&4] - 0.8).abs() < 1e-10);
    }
}
