//! Two-frequency harmonic lattice and the multidimensional DFT operators.
//!
//! A trial function is `u(ξ, ζ) = Σ A_mk cos(kωξ + mΩζ + θ)` over an index
//! set of `(m, k)` pairs. It is sampled on a torus grid stored in phase
//! units, so the synthesis matrix does not depend on the numeric value of
//! `ω`; only the second-derivative multipliers do.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Secular and drive angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPair {
    pub omega: f64,
    pub drive: f64,
}

impl FrequencyPair {
    pub fn new(omega: f64, drive: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) || !(drive > 0.0 && drive.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "frequencies must be positive and finite (omega = {omega}, drive = {drive})"
            )));
        }
        Ok(Self { omega, drive })
    }

    /// Normalized secular frequency `2ω/Ω`.
    pub fn beta(&self) -> f64 {
        2.0 * self.omega / self.drive
    }

    /// Angular frequency of harmonic `(m, k)`.
    pub fn harmonic(&self, m: i32, k: u32) -> f64 {
        k as f64 * self.omega + m as f64 * self.drive
    }
}

/// Ordered set of retained `(m, k)` harmonics.
///
/// Entries are kept sorted by `(m, k)`; this is also the vectorization
/// order of every coefficient vector built on the set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarmonicIndexSet {
    entries: Vec<(i32, u32)>,
}

impl HarmonicIndexSet {
    /// Full block `-M..=M` x `1..=K`, plus the `k = 0` row when requested.
    ///
    /// At `θ = 0` the `k = 0` row keeps only `m >= 0`, because
    /// `cos(mχ)` and `cos(-mχ)` are the same column there.
    pub fn build(max_m: u32, max_k: u32, include_k0: bool, theta: f64) -> Result<Self> {
        if max_k == 0 {
            return Err(Error::InvalidIndexSet("K must be at least 1".into()));
        }
        let m = max_m as i32;
        let mut entries = Vec::with_capacity(((2 * m + 1) as usize) * (max_k as usize + 1));
        for mi in -m..=m {
            if include_k0 && (theta != 0.0 || mi >= 0) {
                entries.push((mi, 0));
            }
            for k in 1..=max_k {
                entries.push((mi, k));
            }
        }
        Self::from_entries(entries)
    }

    /// Ordinary Floquet set: secular fundamental only (`K = 1`).
    pub fn ordinary_floquet(max_m: u32, include_k0: bool, theta: f64) -> Result<Self> {
        Self::build(max_m, 1, include_k0, theta)
    }

    pub fn from_entries(mut entries: Vec<(i32, u32)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidIndexSet("index set is empty".into()));
        }
        entries.sort_unstable();
        if entries.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndexSet("duplicate (m, k) entries".into()));
        }
        if entries.binary_search(&(0, 1)).is_err() {
            return Err(Error::InvalidIndexSet(
                "the secular fundamental (0, 1) must be present".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(i32, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, m: i32, k: u32) -> Option<usize> {
        self.entries.binary_search(&(m, k)).ok()
    }

    /// Position of the prescribed secular amplitude `(0, 1)`.
    pub fn secular_position(&self) -> usize {
        self.position(0, 1).expect("(0,1) is an invariant member")
    }

    pub fn max_m(&self) -> u32 {
        self.entries.iter().map(|e| e.0.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn max_k(&self) -> u32 {
        self.entries.iter().map(|e| e.1).max().unwrap_or(0)
    }

    pub fn has_k0(&self) -> bool {
        self.entries.iter().any(|e| e.1 == 0)
    }

    /// Drops the harmonics that alias on an undersampled grid.
    ///
    /// Used by the paper-parity mode: on a 15-point ξ grid the `k = 8`
    /// columns coincide with `k = 7` columns and are removed.
    pub fn without_aliased(&self, grid: &SamplingGrid) -> Result<Self> {
        let k_lim = ((grid.m_xi - 1) / 2) as u32;
        let m_lim = ((grid.m_zeta - 1) / 2) as u32;
        let kept = self
            .entries
            .iter()
            .copied()
            .filter(|&(m, k)| k <= k_lim && m.unsigned_abs() <= m_lim)
            .collect();
        Self::from_entries(kept)
    }
}

/// Real amplitudes `A_mk` on an index set, with the shared phase `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub index_set: HarmonicIndexSet,
    pub amplitudes: Vec<f64>,
    pub theta: f64,
}

impl CoefficientTable {
    pub fn zeros(index_set: HarmonicIndexSet, theta: f64) -> Self {
        let n = index_set.len();
        Self {
            index_set,
            amplitudes: vec![0.0; n],
            theta,
        }
    }

    pub fn new(index_set: HarmonicIndexSet, amplitudes: Vec<f64>, theta: f64) -> Result<Self> {
        if amplitudes.len() != index_set.len() {
            return Err(Error::DimensionMismatch {
                expected: index_set.len(),
                got: amplitudes.len(),
            });
        }
        Ok(Self {
            index_set,
            amplitudes,
            theta,
        })
    }

    pub fn get(&self, m: i32, k: u32) -> Option<f64> {
        self.index_set.position(m, k).map(|i| self.amplitudes[i])
    }

    pub fn set(&mut self, m: i32, k: u32, value: f64) -> bool {
        match self.index_set.position(m, k) {
            Some(i) => {
                self.amplitudes[i] = value;
                true
            }
            None => false,
        }
    }

    /// Copies every amplitude whose `(m, k)` also exists in `other`.
    pub fn fill_from(&mut self, other: &CoefficientTable) {
        for (i, &(m, k)) in self.index_set.entries().iter().enumerate() {
            if let Some(v) = other.get(m, k) {
                self.amplitudes[i] = v;
            }
        }
    }

    /// Real-time value `u(ξ)` on the diagonal `ξ = ζ`.
    pub fn position_at(&self, xi: f64, freqs: &FrequencyPair) -> f64 {
        self.index_set
            .entries()
            .iter()
            .zip(&self.amplitudes)
            .map(|(&(m, k), a)| a * (freqs.harmonic(m, k) * xi + self.theta).cos())
            .sum()
    }

    pub fn velocity_at(&self, xi: f64, freqs: &FrequencyPair) -> f64 {
        self.index_set
            .entries()
            .iter()
            .zip(&self.amplitudes)
            .map(|(&(m, k), a)| {
                let w = freqs.harmonic(m, k);
                -a * w * (w * xi + self.theta).sin()
            })
            .sum()
    }

    /// Second time derivative on the diagonal, via the multipliers
    /// `-(kω + mΩ)²`.
    pub fn acceleration_at(&self, xi: f64, freqs: &FrequencyPair) -> f64 {
        self.index_set
            .entries()
            .iter()
            .zip(&self.amplitudes)
            .map(|(&(m, k), a)| {
                let w = freqs.harmonic(m, k);
                -a * w * w * (w * xi + self.theta).cos()
            })
            .sum()
    }
}

/// Torus sampling grid in phase units.
///
/// Row `i` of any sampled vector corresponds to `s = i / m_zeta + 1`,
/// `p = i % m_zeta + 1` (s-major, p-minor), at phases `2πs/m_xi` and
/// `2πp/m_zeta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingGrid {
    pub m_xi: usize,
    pub m_zeta: usize,
    pub allow_undersampled: bool,
}

impl SamplingGrid {
    pub fn new(m_xi: usize, m_zeta: usize) -> Result<Self> {
        if m_xi == 0 || m_zeta == 0 {
            return Err(Error::InvalidInput("grid sizes must be positive".into()));
        }
        Ok(Self {
            m_xi,
            m_zeta,
            allow_undersampled: false,
        })
    }

    /// Smallest grid that passes the guardrail for `set`, oversampled by
    /// `factor` (1 gives exactly `2K+1` by `2M+1`).
    pub fn for_index_set(set: &HarmonicIndexSet, factor: usize) -> Self {
        let factor = factor.max(1);
        Self {
            m_xi: 2 * factor * set.max_k() as usize + 1,
            m_zeta: 2 * factor * set.max_m() as usize + 1,
            allow_undersampled: false,
        }
    }

    pub fn allowing_undersampled(mut self) -> Self {
        self.allow_undersampled = true;
        self
    }

    pub fn len(&self) -> usize {
        self.m_xi * self.m_zeta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn xi_phases(&self) -> Vec<f64> {
        (1..=self.m_xi)
            .map(|s| 2.0 * PI * s as f64 / self.m_xi as f64)
            .collect()
    }

    pub fn zeta_phases(&self) -> Vec<f64> {
        (1..=self.m_zeta)
            .map(|p| 2.0 * PI * p as f64 / self.m_zeta as f64)
            .collect()
    }

    /// Drive phase `Ωζ_p` of every grid row, in row order.
    pub fn drive_phases(&self) -> Vec<f64> {
        let zeta = self.zeta_phases();
        (0..self.len()).map(|i| zeta[i % self.m_zeta]).collect()
    }

    pub fn passes_guardrail(&self, set: &HarmonicIndexSet) -> bool {
        self.m_xi > 2 * set.max_k() as usize && self.m_zeta > 2 * set.max_m() as usize
    }
}

/// Synthesis matrix `S`, its least-squares left inverse, and the
/// second-derivative multipliers for one index set and grid.
#[derive(Debug, Clone)]
pub struct MdftOperator {
    index_set: HarmonicIndexSet,
    grid: SamplingGrid,
    theta: f64,
    freqs: FrequencyPair,
    s_matrix: DMatrix<f64>,
    projector: DMatrix<f64>,
    // Transposes, so that each row of `S` and `P` is a contiguous column.
    s_rows: DMatrix<f64>,
    p_rows: DMatrix<f64>,
    drive_phases: Vec<f64>,
}

const RANK_TOL: f64 = 1e-10;

impl MdftOperator {
    pub fn build(
        set: &HarmonicIndexSet,
        grid: &SamplingGrid,
        freqs: FrequencyPair,
        theta: f64,
    ) -> Result<Self> {
        if !grid.passes_guardrail(set) && !grid.allow_undersampled {
            return Err(Error::GridTooCoarse {
                m_xi: grid.m_xi,
                m_zeta: grid.m_zeta,
                need_xi: 2 * set.max_k() as usize + 1,
                need_zeta: 2 * set.max_m() as usize + 1,
            });
        }
        let n = set.len();
        let rows = grid.len();
        if rows < n {
            return Err(Error::RankDeficient {
                rank: rows,
                columns: n,
                collisions: Vec::new(),
            });
        }
        let xi = grid.xi_phases();
        let zeta = grid.zeta_phases();
        let s_matrix = DMatrix::from_fn(rows, n, |i, j| {
            let (m, k) = set.entries()[j];
            let s = i / grid.m_zeta;
            let p = i % grid.m_zeta;
            (k as f64 * xi[s] + m as f64 * zeta[p] + theta).cos()
        });

        let svd = s_matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&sv| sv > smax * RANK_TOL)
            .count();
        if rank < n {
            return Err(Error::RankDeficient {
                rank,
                columns: n,
                collisions: colliding_columns(set, &s_matrix),
            });
        }

        let qr = s_matrix.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let projector = r
            .solve_upper_triangular(&q.transpose())
            .ok_or(Error::SingularJacobian)?;

        Ok(Self {
            index_set: set.clone(),
            grid: *grid,
            theta,
            freqs,
            s_rows: s_matrix.transpose(),
            p_rows: projector.transpose(),
            s_matrix,
            projector,
            drive_phases: grid.drive_phases(),
        })
    }

    pub fn index_set(&self) -> &HarmonicIndexSet {
        &self.index_set
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn freqs(&self) -> FrequencyPair {
        self.freqs
    }

    pub fn s_matrix(&self) -> &DMatrix<f64> {
        &self.s_matrix
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// Drive phase of each sample row.
    pub fn drive_phases(&self) -> &[f64] {
        &self.drive_phases
    }

    /// Same operator with a new secular frequency; `S` and the projector
    /// are reused unchanged.
    pub fn with_omega(&self, omega: f64) -> Self {
        let mut out = self.clone();
        out.freqs.omega = omega;
        out
    }

    pub fn d2_multipliers(&self) -> DVector<f64> {
        self.d2_at(self.freqs.omega)
    }

    pub fn d2_at(&self, omega: f64) -> DVector<f64> {
        let f = FrequencyPair {
            omega,
            drive: self.freqs.drive,
        };
        DVector::from_iterator(
            self.index_set.len(),
            self.index_set.entries().iter().map(|&(m, k)| {
                let w = f.harmonic(m, k);
                -w * w
            }),
        )
    }

    fn check_table(&self, coeffs: &CoefficientTable) -> Result<()> {
        if coeffs.index_set != self.index_set {
            return Err(Error::DimensionMismatch {
                expected: self.index_set.len(),
                got: coeffs.index_set.len(),
            });
        }
        Ok(())
    }

    /// Samples the trial function on the grid (`û = S ũ`).
    pub fn synthesize(&self, coeffs: &CoefficientTable) -> Result<DVector<f64>> {
        self.check_table(coeffs)?;
        Ok(self.synthesize_raw(&DVector::from_column_slice(&coeffs.amplitudes)))
    }

    pub(crate) fn synthesize_raw(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.s_rows.ncols(),
            self.s_rows.column_iter().map(|row| dot2(row.as_slice(), coeffs.as_slice())),
        )
    }

    /// Least-squares projection of grid samples onto the harmonic columns.
    pub fn analyze(&self, samples: &DVector<f64>) -> Result<CoefficientTable> {
        let c = self.analyze_raw(samples)?;
        Ok(CoefficientTable {
            index_set: self.index_set.clone(),
            amplitudes: c.as_slice().to_vec(),
            theta: self.theta,
        })
    }

    pub(crate) fn analyze_raw(&self, samples: &DVector<f64>) -> Result<DVector<f64>> {
        if samples.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: samples.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.p_rows.ncols(),
            self.p_rows.column_iter().map(|row| dot2(row.as_slice(), samples.as_slice())),
        ))
    }

    /// Euclidean norm of the part of `samples` outside the harmonic span.
    pub fn fit_residual_norm(&self, samples: &DVector<f64>) -> Result<f64> {
        let c = self.analyze_raw(samples)?;
        Ok((samples - &self.s_matrix * c).norm())
    }
}

/// Compensated dot product, accurate as if accumulated in twice the
/// working precision.
fn dot2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let p = x * y;
        let pe = x.mul_add(y, -p);
        let t = s + p;
        let z = t - s;
        c += (s - (t - z)) + (p - z) + pe;
        s = t;
    }
    s + c
}

fn colliding_columns(set: &HarmonicIndexSet, s: &DMatrix<f64>) -> Vec<((i32, u32), (i32, u32))> {
    let norms: Vec<f64> = s.column_iter().map(|c| c.norm()).collect();
    let mut out = Vec::new();
    for i in 0..s.ncols() {
        for j in (i + 1)..s.ncols() {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let c = s.column(i).dot(&s.column(j)) / (norms[i] * norms[j]);
            if (c.abs() - 1.0).abs() < 1e-9 {
                out.push((set.entries()[i], set.entries()[j]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_freqs() -> FrequencyPair {
        FrequencyPair::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn minimal_index_set() {
        let set = HarmonicIndexSet::build(0, 1, false, 0.0).unwrap();
        assert_eq!(set.entries(), &[(0, 1)]);
    }

    #[test]
    fn nefs_set_sizes() {
        assert_eq!(HarmonicIndexSet::build(7, 8, false, 0.0).unwrap().len(), 120);
        let with_k0 = HarmonicIndexSet::build(7, 8, true, 0.0).unwrap();
        assert_eq!(with_k0.len(), 128);
        assert!((0..=7).all(|m| with_k0.position(m, 0).is_some()));
        assert!(with_k0.position(-1, 0).is_none());
        // away from θ = 0 the whole row is kept
        assert_eq!(HarmonicIndexSet::build(7, 8, true, 0.3).unwrap().len(), 135);
    }

    #[test]
    fn rejects_k_zero_and_bad_entries() {
        assert!(HarmonicIndexSet::build(3, 0, false, 0.0).is_err());
        assert!(HarmonicIndexSet::from_entries(vec![]).is_err());
        assert!(HarmonicIndexSet::from_entries(vec![(1, 1)]).is_err());
        assert!(HarmonicIndexSet::from_entries(vec![(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn single_column_operator() {
        let set = HarmonicIndexSet::build(0, 1, false, 0.0).unwrap();
        let grid = SamplingGrid::new(17, 15).unwrap();
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        for i in 0..grid.len() {
            let s = i / 15 + 1;
            let expect = (2.0 * PI * s as f64 / 17.0).cos();
            assert!((op.s_matrix()[(i, 0)] - expect).abs() < 1e-15);
        }
        let id = op.projector() * op.s_matrix();
        assert!((id[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parity_grid_aliases_k8_against_k7() {
        let set = HarmonicIndexSet::build(7, 8, false, 0.0).unwrap();
        let grid = SamplingGrid::new(15, 15).unwrap();
        assert!(matches!(
            MdftOperator::build(&set, &grid, unit_freqs(), 0.0),
            Err(Error::GridTooCoarse { .. })
        ));
        let err = MdftOperator::build(&set, &grid.allowing_undersampled(), unit_freqs(), 0.0)
            .unwrap_err();
        match err {
            Error::RankDeficient { collisions, rank, .. } => {
                assert!(rank < 120);
                assert!(!collisions.is_empty());
                for ((m1, k1), (m2, k2)) in collisions {
                    let ok = (k1 == 7 && k2 == 8 && m1 == -m2) || (k1 == 8 && k2 == 7 && m1 == -m2);
                    assert!(ok, "unexpected collision ({m1},{k1})/({m2},{k2})");
                }
            }
            other => panic!("expected RankDeficient, got {other}"),
        }
        // parity mode drops k = 8 and the operator becomes full rank
        let pruned = set.without_aliased(&grid).unwrap();
        assert_eq!(pruned.max_k(), 7);
        MdftOperator::build(&pruned, &grid.allowing_undersampled(), unit_freqs(), 0.0).unwrap();
    }

    #[test]
    fn projector_is_left_inverse_on_nefs_set() {
        let set = HarmonicIndexSet::build(7, 8, false, 0.0).unwrap();
        let grid = SamplingGrid::new(17, 15).unwrap();
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        let id = op.projector() * op.s_matrix();
        let err = (id - DMatrix::<f64>::identity(120, 120)).abs().max();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn k0_row_degeneracy() {
        let grid = SamplingGrid::new(17, 15).unwrap();
        // restricted row: full rank
        let set = HarmonicIndexSet::build(7, 8, true, 0.0).unwrap();
        MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        // full row at θ = 0: cos(mχ) and cos(-mχ) collide
        let mut entries = set.entries().to_vec();
        entries.extend((1..=7).map(|m| (-m, 0)));
        let full = HarmonicIndexSet::from_entries(entries).unwrap();
        match MdftOperator::build(&full, &grid, unit_freqs(), 0.0) {
            Err(Error::RankDeficient { collisions, .. }) => assert_eq!(collisions.len(), 7),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn basis_column_analyzes_to_unit_coefficient() {
        let set = HarmonicIndexSet::build(7, 8, false, 0.0).unwrap();
        let grid = SamplingGrid::new(17, 15).unwrap();
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        let j = set.position(3, 2).unwrap();
        let col = op.s_matrix().column(j).into_owned();
        let t = op.analyze(&col).unwrap();
        for (i, a) in t.amplitudes.iter().enumerate() {
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((a - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_samples_are_outside_span() {
        let set = HarmonicIndexSet::build(2, 2, false, 0.0).unwrap();
        let grid = SamplingGrid::new(5, 5).unwrap();
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        let ones = DVector::from_element(25, 1.0);
        let t = op.analyze(&ones).unwrap();
        assert!(t.amplitudes.iter().all(|a| a.abs() < 1e-12));
        assert!((op.fit_residual_norm(&ones).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn synthesize_single_cosine_and_zero() {
        let set = HarmonicIndexSet::build(2, 3, false, 0.0).unwrap();
        let grid = SamplingGrid::new(9, 7).unwrap();
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        let zero = CoefficientTable::zeros(set.clone(), 0.0);
        assert!(op.synthesize(&zero).unwrap().iter().all(|v| *v == 0.0));
        let mut one = zero.clone();
        one.set(0, 1, 1.0);
        let u = op.synthesize(&one).unwrap();
        for (i, v) in u.iter().enumerate() {
            let s = i / 7 + 1;
            assert!((v - (2.0 * PI * s as f64 / 9.0).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let set = HarmonicIndexSet::build(1, 1, false, 0.0).unwrap();
        let other = HarmonicIndexSet::build(1, 2, false, 0.0).unwrap();
        let grid = SamplingGrid::for_index_set(&other, 1);
        let op = MdftOperator::build(&set, &grid, unit_freqs(), 0.0).unwrap();
        assert!(op.synthesize(&CoefficientTable::zeros(other, 0.0)).is_err());
        assert!(op.analyze(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn s_matrix_is_independent_of_omega() {
        let set = HarmonicIndexSet::build(3, 4, true, 0.0).unwrap();
        let grid = SamplingGrid::for_index_set(&set, 2);
        let a = MdftOperator::build(&set, &grid, FrequencyPair::new(1.0, 2.0).unwrap(), 0.0).unwrap();
        let b = MdftOperator::build(&set, &grid, FrequencyPair::new(2.37, 2.0).unwrap(), 0.0).unwrap();
        assert_eq!(a.s_matrix(), b.s_matrix());
        assert_eq!(a.projector(), b.projector());
        assert_ne!(a.d2_multipliers(), b.d2_multipliers());
    }

    #[test]
    fn d2_matches_finite_difference_in_real_time() {
        let set = HarmonicIndexSet::build(2, 3, true, 0.0).unwrap();
        let freqs = FrequencyPair::new(0.413, 2.0).unwrap();
        let amps: Vec<f64> = (0..set.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let t = CoefficientTable::new(set, amps, 0.0).unwrap();
        let h = 1e-4;
        for &xi in &[0.0, 0.7, 3.1, 12.5] {
            let fd = (t.position_at(xi + h, &freqs) - 2.0 * t.position_at(xi, &freqs)
                + t.position_at(xi - h, &freqs))
                / (h * h);
            let exact = t.acceleration_at(xi, &freqs);
            assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }
}
