//! Adaptive explicit Runge–Kutta 8(5,3) integrator with dense output.

use super::tableau::*;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_step: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::InvalidInput(
                "integrator tolerances and max step must be positive".into(),
            ));
        }
        Ok(())
    }
}

const SAFE: f64 = 0.9;
const FAC1: f64 = 0.333;
const FAC2: f64 = 6.0;

type Vector<const N: usize> = [f64; N];

fn axpy<const N: usize>(y: &Vector<N>, h: f64, terms: &[(f64, &Vector<N>)]) -> Vector<N> {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn combo<const N: usize>(terms: &[(f64, &Vector<N>)]) -> Vector<N> {
    axpy(&[0.0; N], 1.0, terms)
}

fn check_finite<const N: usize>(t: f64, v: &Vector<N>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { u: v[0], phase: t })
    }
}

/// The twelve stages of one step. `k[0]` is `f(t, y)`; `k[11]` is the
/// stage at `t + h`.
struct Stages<const N: usize> {
    k: [Vector<N>; 12],
    y_new: Vector<N>,
}

fn stages<const N: usize, F>(f: &F, t: f64, y: &Vector<N>, k1: &Vector<N>, h: f64) -> Stages<N>
where
    F: Fn(f64, &Vector<N>) -> Vector<N>,
{
    let mut k = [[0.0; N]; 12];
    k[0] = *k1;
    k[1] = f(t + C2 * h, &axpy(y, h, &[(A21, &k[0])]));
    k[2] = f(t + C3 * h, &axpy(y, h, &[(A31, &k[0]), (A32, &k[1])]));
    k[3] = f(t + C4 * h, &axpy(y, h, &[(A41, &k[0]), (A43, &k[2])]));
    k[4] = f(t + C5 * h, &axpy(y, h, &[(A51, &k[0]), (A53, &k[2]), (A54, &k[3])]));
    k[5] = f(t + C6 * h, &axpy(y, h, &[(A61, &k[0]), (A64, &k[3]), (A65, &k[4])]));
    k[6] = f(
        t + C7 * h,
        &axpy(y, h, &[(A71, &k[0]), (A74, &k[3]), (A75, &k[4]), (A76, &k[5])]),
    );
    k[7] = f(
        t + C8 * h,
        &axpy(y, h, &[(A81, &k[0]), (A84, &k[3]), (A85, &k[4]), (A86, &k[5]), (A87, &k[6])]),
    );
    k[8] = f(
        t + C9 * h,
        &axpy(
            y,
            h,
            &[(A91, &k[0]), (A94, &k[3]), (A95, &k[4]), (A96, &k[5]), (A97, &k[6]), (A98, &k[7])],
        ),
    );
    k[9] = f(
        t + C10 * h,
        &axpy(
            y,
            h,
            &[
                (A101, &k[0]),
                (A104, &k[3]),
                (A105, &k[4]),
                (A106, &k[5]),
                (A107, &k[6]),
                (A108, &k[7]),
                (A109, &k[8]),
            ],
        ),
    );
    k[10] = f(
        t + C11 * h,
        &axpy(
            y,
            h,
            &[
                (A111, &k[0]),
                (A114, &k[3]),
                (A115, &k[4]),
                (A116, &k[5]),
                (A117, &k[6]),
                (A118, &k[7]),
                (A119, &k[8]),
                (A1110, &k[9]),
            ],
        ),
    );
    k[11] = f(
        t + h,
        &axpy(
            y,
            h,
            &[
                (A121, &k[0]),
                (A124, &k[3]),
                (A125, &k[4]),
                (A126, &k[5]),
                (A127, &k[6]),
                (A128, &k[7]),
                (A129, &k[8]),
                (A1210, &k[9]),
                (A1211, &k[10]),
            ],
        ),
    );
    let y_new = axpy(
        y,
        h,
        &[
            (B1, &k[0]),
            (B6, &k[5]),
            (B7, &k[6]),
            (B8, &k[7]),
            (B9, &k[8]),
            (B10, &k[9]),
            (B11, &k[10]),
            (B12, &k[11]),
        ],
    );
    Stages { k, y_new }
}

/// Dense-output polynomial of one accepted step.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    cont: [Vector<N>; 8],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> Vector<N> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        let mut out = [0.0; N];
        for i in 0..N {
            let conpar = c[4][i] + s * (c[5][i] + s1 * (c[6][i] + s * c[7][i]));
            out[i] = c[0][i] + s * (c[1][i] + s1 * (c[2][i] + s * (c[3][i] + s1 * conpar)));
        }
        out
    }
}

pub struct Dop853<const N: usize, F> {
    f: F,
    cfg: IntegratorConfig,
    t: f64,
    y: Vector<N>,
    k1: Vector<N>,
    h: f64,
    last_rejected: bool,
    steps: usize,
}

impl<const N: usize, F> Dop853<N, F>
where
    F: Fn(f64, &Vector<N>) -> Vector<N>,
{
    pub fn new(f: F, t0: f64, y0: Vector<N>, cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        check_finite(t0, &y0)?;
        let k1 = f(t0, &y0);
        check_finite(t0, &k1)?;
        let mut s = Self {
            f,
            cfg,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            last_rejected: false,
            steps: 0,
        };
        s.h = s.initial_step();
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &Vector<N> {
        &self.y
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.cfg.abs_tol + self.cfg.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&self) -> f64 {
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..N {
            let sk = self.scale(self.y[i], self.y[i]);
            dnf += (self.k1[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            (dny / dnf).sqrt() * 0.01
        };
        h = h.min(self.cfg.max_step);
        let y1 = axpy(&self.y, h, &[(1.0, &self.k1)]);
        let f1 = (self.f)(self.t + h, &y1);
        let mut der2 = 0.0;
        for i in 0..N {
            let sk = self.scale(self.y[i], self.y[i]);
            der2 += ((f1[i] - self.k1[i]) / sk).powi(2);
        }
        let der2 = der2.sqrt() / h;
        let der12 = der2.abs().max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / der12).powf(1.0 / 8.0)
        };
        (100.0 * h).min(h1).min(self.cfg.max_step)
    }

    /// Advances by one accepted step, not past `t_end`, and returns its
    /// dense-output polynomial.
    pub fn step(&mut self, t_end: f64) -> Result<DenseStep<N>> {
        loop {
            if self.steps >= self.cfg.max_steps {
                return Err(Error::InvalidInput(format!(
                    "integrator exceeded {} steps",
                    self.cfg.max_steps
                )));
            }
            let mut h = self.h.min(self.cfg.max_step);
            if self.t + h >= t_end || (t_end - self.t - h) < 1e-12 * h {
                h = t_end - self.t;
            }
            if 0.1 * h.abs() <= self.t.abs() * f64::EPSILON || h <= 0.0 {
                return Err(Error::StepSizeUnderflow(self.t));
            }
            self.steps += 1;
            let st = stages(&self.f, self.t, &self.y, &self.k1, h);
            let k = &st.k;

            let (mut err, mut err2) = (0.0, 0.0);
            for i in 0..N {
                let sk = self.scale(self.y[i], st.y_new[i]);
                let bsum = (st.y_new[i] - self.y[i]) / h;
                let e2 = bsum - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
                err2 += (e2 / sk).powi(2);
                let e = ER1 * k[0][i]
                    + ER6 * k[5][i]
                    + ER7 * k[6][i]
                    + ER8 * k[7][i]
                    + ER9 * k[8][i]
                    + ER10 * k[9][i]
                    + ER11 * k[10][i]
                    + ER12 * k[11][i];
                err += (e / sk).powi(2);
            }
            let mut deno = err + 0.01 * err2;
            if deno <= 0.0 {
                deno = 1.0;
            }
            let err = h.abs() * err * (1.0 / (deno * N as f64)).sqrt();
            if !err.is_finite() {
                self.h = h * 0.1;
                self.last_rejected = true;
                continue;
            }

            let fac11 = err.powf(1.0 / 8.0);
            let fac = (1.0 / FAC2).max((1.0 / FAC1).min(fac11 / SAFE));
            let mut h_new = h / fac;

            if err <= 1.0 {
                check_finite(self.t + h, &st.y_new)?;
                let t_new = self.t + h;
                let knew = (self.f)(t_new, &st.y_new);
                check_finite(t_new, &knew)?;
                let dense = self.dense(h, k, &st.y_new, &knew);
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.last_rejected = false;
                self.t = t_new;
                self.y = st.y_new;
                self.k1 = knew;
                self.h = h_new;
                return Ok(dense);
            }
            self.h = h / (1.0 / FAC1).min(fac11 / SAFE);
            self.last_rejected = true;
        }
    }

    fn dense(&self, h: f64, k: &[Vector<N>; 12], y_new: &Vector<N>, knew: &Vector<N>) -> DenseStep<N> {
        let y = &self.y;
        let t = self.t;
        let mut cont = [[0.0; N]; 8];
        for i in 0..N {
            let ydiff = y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            cont[0][i] = y[i];
            cont[1][i] = ydiff;
            cont[2][i] = bspl;
            cont[3][i] = ydiff - h * knew[i] - bspl;
        }
        let d = [
            [D41, D46, D47, D48, D49, D410, D411, D412, D413, D414, D415, D416],
            [D51, D56, D57, D58, D59, D510, D511, D512, D513, D514, D515, D516],
            [D61, D66, D67, D68, D69, D610, D611, D612, D613, D614, D615, D616],
            [D71, D76, D77, D78, D79, D710, D711, D712, D713, D714, D715, D716],
        ];
        let k14 = (self.f)(
            t + C14 * h,
            &axpy(
                y,
                h,
                &[
                    (A141, &k[0]),
                    (A147, &k[6]),
                    (A148, &k[7]),
                    (A149, &k[8]),
                    (A1410, &k[9]),
                    (A1411, &k[10]),
                    (A1412, &k[11]),
                    (A1413, knew),
                ],
            ),
        );
        let k15 = (self.f)(
            t + C15 * h,
            &axpy(
                y,
                h,
                &[
                    (A151, &k[0]),
                    (A156, &k[5]),
                    (A157, &k[6]),
                    (A158, &k[7]),
                    (A1511, &k[10]),
                    (A1512, &k[11]),
                    (A1513, knew),
                    (A1514, &k14),
                ],
            ),
        );
        let k16 = (self.f)(
            t + C16 * h,
            &axpy(
                y,
                h,
                &[
                    (A161, &k[0]),
                    (A166, &k[5]),
                    (A167, &k[6]),
                    (A168, &k[7]),
                    (A169, &k[8]),
                    (A1613, knew),
                    (A1614, &k14),
                    (A1615, &k15),
                ],
            ),
        );
        for (row, dj) in d.iter().enumerate() {
            let c = combo(&[
                (dj[0], &k[0]),
                (dj[1], &k[5]),
                (dj[2], &k[6]),
                (dj[3], &k[7]),
                (dj[4], &k[8]),
                (dj[5], &k[9]),
                (dj[6], &k[10]),
                (dj[7], &k[11]),
                (dj[8], knew),
                (dj[9], &k14),
                (dj[10], &k15),
                (dj[11], &k16),
            ]);
            for i in 0..N {
                cont[4 + row][i] = h * c[i];
            }
        }
        DenseStep { t0: t, h, cont }
    }
}

/// Fixed-step integration with `n` equal steps (no error control).
pub fn integrate_fixed<const N: usize, F>(f: F, t0: f64, y0: Vector<N>, t1: f64, n: usize) -> Vector<N>
where
    F: Fn(f64, &Vector<N>) -> Vector<N>,
{
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        y = stages(&f, t, &y, &k1, h).y_new;
    }
    y
}

/// Piecewise dense solution over `[t0, t_end]`.
#[derive(Debug, Clone)]
pub struct DenseSolution<const N: usize> {
    steps: Vec<DenseStep<N>>,
}

impl<const N: usize> DenseSolution<N> {
    pub fn t_start(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.t0)
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.t1())
    }

    pub fn steps(&self) -> &[DenseStep<N>] {
        &self.steps
    }

    /// Interpolated state; clamps to the covered interval.
    pub fn eval(&self, t: f64) -> Vector<N> {
        let i = self.steps.partition_point(|s| s.t1() < t);
        let i = i.min(self.steps.len() - 1);
        self.steps[i].eval(t)
    }
}

pub fn solve_dense<const N: usize, F>(
    f: F,
    t0: f64,
    y0: Vector<N>,
    t_end: f64,
    cfg: IntegratorConfig,
) -> Result<DenseSolution<N>>
where
    F: Fn(f64, &Vector<N>) -> Vector<N>,
{
    if !(t_end > t0) {
        return Err(Error::InvalidInput("integration span must be positive".into()));
    }
    let mut integ = Dop853::new(f, t0, y0, cfg)?;
    let mut steps = Vec::new();
    while integ.t() < t_end {
        steps.push(integ.step(t_end)?);
    }
    Ok(DenseSolution { steps })
}
