//! Algebraic network solve: Newton on the complex current balance
//! `Y V = I(V)` in rectangular coordinates, reusing the LU factors across
//! iterations and steps until convergence slows down.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netmodel::AdmittanceMatrix;

/// Current injected by the devices at one node and its Jacobian
/// `[dIr/dVr, dIr/dVi, dIi/dVr, dIi/dVi]`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Injection {
    pub i: Complex64,
    pub d: [f64; 4],
}

impl Injection {
    pub fn add(&mut self, i: Complex64, d: [f64; 4]) {
        self.i += i;
        for k in 0..4 {
            self.d[k] += d[k];
        }
    }

    pub fn sub(&mut self, i: Complex64, d: [f64; 4]) {
        self.i -= i;
        for k in 0..4 {
            self.d[k] -= d[k];
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NetworkSolver {
    y: AdmittanceMatrix,
    /// Unknown index of each node; `None` for voltage-source nodes.
    col: Vec<Option<usize>>,
    unknowns: usize,
    lu: Option<LU<f64, Dyn, Dyn>>,
    stale: bool,
    tol: f64,
    max_iter: usize,
    pub factorizations: usize,
}

impl NetworkSolver {
    pub fn new(y: AdmittanceMatrix, fixed: &[bool], tol: f64) -> Self {
        let mut col = vec![None; y.dim()];
        let mut m = 0;
        for (i, c) in col.iter_mut().enumerate() {
            if !fixed[i] {
                *c = Some(m);
                m += 1;
            }
        }
        NetworkSolver {
            y,
            col,
            unknowns: m,
            lu: None,
            stale: true,
            tol,
            max_iter: 30,
            factorizations: 0,
        }
    }

    pub fn set_admittance(&mut self, y: AdmittanceMatrix) {
        self.y = y;
        self.stale = true;
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    fn mismatch(&self, v: &[Complex64], inj: &[Injection], r: &mut DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..v.len() {
            let Some(c) = self.col[i] else { continue };
            let yv = self
                .y
                .row(i)
                .iter()
                .zip(v)
                .fold(Complex64::new(0.0, 0.0), |acc, (y, v)| acc + y * v);
            let m = yv - inj[i].i;
            r[2 * c] = m.re;
            r[2 * c + 1] = m.im;
            worst = worst.max(m.re.abs()).max(m.im.abs());
        }
        worst
    }

    fn factor(&mut self, inj: &[Injection]) {
        let n = self.y.dim();
        let m = self.unknowns;
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for i in 0..n {
            let Some(ci) = self.col[i] else { continue };
            for j in 0..n {
                let Some(cj) = self.col[j] else { continue };
                let y = self.y.get(i, j);
                jac[(2 * ci, 2 * cj)] += y.re;
                jac[(2 * ci, 2 * cj + 1)] -= y.im;
                jac[(2 * ci + 1, 2 * cj)] += y.im;
                jac[(2 * ci + 1, 2 * cj + 1)] += y.re;
            }
            let d = inj[i].d;
            jac[(2 * ci, 2 * ci)] -= d[0];
            jac[(2 * ci, 2 * ci + 1)] -= d[1];
            jac[(2 * ci + 1, 2 * ci)] -= d[2];
            jac[(2 * ci + 1, 2 * ci + 1)] -= d[3];
        }
        self.lu = Some(jac.lu());
        self.stale = false;
        self.factorizations += 1;
    }

    /// Solve for the free node voltages in place. `inject` fills the device
    /// injections for a voltage vector. Steps that raise the mismatch are
    /// halved (with a fresh Jacobian) before being taken.
    pub fn solve(
        &mut self,
        v: &mut [Complex64],
        mut inject: impl FnMut(&[Complex64], &mut [Injection]),
    ) -> Result<usize> {
        let n = v.len();
        let mut inj = vec![Injection::default(); n];
        let mut r = DVector::<f64>::zeros(2 * self.unknowns);
        let mut eval = |this: &Self, v: &[Complex64], inj: &mut [Injection], r: &mut DVector<f64>| {
            inj.iter_mut().for_each(|x| *x = Injection::default());
            inject(v, inj);
            this.mismatch(v, inj, r)
        };
        let mut worst = eval(self, v, &mut inj, &mut r);
        let mut prev = f64::INFINITY;
        let mut trial = v.to_vec();
        let mut trial_inj = inj.clone();
        let mut trial_r = r.clone();
        for it in 0..self.max_iter {
            if !worst.is_finite() {
                break;
            }
            if worst < self.tol {
                return Ok(it);
            }
            let mut fresh = false;
            if self.stale || self.lu.is_none() || worst > 0.2 * prev {
                self.factor(&inj);
                fresh = true;
            }
            prev = worst;
            let mut alpha = 1.0;
            let mut dx = match self.lu.as_ref().and_then(|lu| lu.solve(&r)) {
                Some(dx) => dx,
                None => break,
            };
            loop {
                for i in 0..n {
                    trial[i] = match self.col[i] {
                        Some(c) => v[i] - alpha * Complex64::new(dx[2 * c], dx[2 * c + 1]),
                        None => v[i],
                    };
                }
                let w = eval(self, &trial, &mut trial_inj, &mut trial_r);
                if w < worst || alpha < 0.1 {
                    worst = w;
                    break;
                }
                if !fresh {
                    // the reused factors may be what went wrong
                    self.factor(&inj);
                    fresh = true;
                    match self.lu.as_ref().and_then(|lu| lu.solve(&r)) {
                        Some(d) => dx = d,
                        None => break,
                    }
                    continue;
                }
                alpha *= 0.5;
            }
            v.copy_from_slice(&trial);
            std::mem::swap(&mut inj, &mut trial_inj);
            std::mem::swap(&mut r, &mut trial_r);
        }
        self.stale = true;
        Err(Error::Diverged {
            iterations: self.max_iter,
            mismatch: prev,
        })
    }
}

/// Current drawn by a static load of `s` (pu on system base) with
/// derivative `ds` with respect to |V|, as an injection (negative draw is
/// left to the caller).
pub(crate) fn static_load_current(v: Complex64, s: [f64; 2], ds: [f64; 2]) -> (Complex64, [f64; 4]) {
    let m2 = v.norm_sqr();
    if m2 < 1e-16 {
        return (Complex64::new(0.0, 0.0), [0.0; 4]);
    }
    let m = m2.sqrt();
    let (a, b) = (v.re, v.im);
    let (p, q) = (s[0], s[1]);
    let (dp, dq) = (ds[0], ds[1]);
    let ir = (p * a + q * b) / m2;
    let ii = (p * b - q * a) / m2;
    let m4 = m2 * m2;
    let d = [
        (dp * a * a / m + p + dq * a * b / m) / m2 - 2.0 * a * (p * a + q * b) / m4,
        (dp * b * a / m + dq * b * b / m + q) / m2 - 2.0 * b * (p * a + q * b) / m4,
        (dp * a * b / m - dq * a * a / m - q) / m2 - 2.0 * a * (p * b - q * a) / m4,
        (dp * b * b / m + p - dq * b * a / m) / m2 - 2.0 * b * (p * b - q * a) / m4,
    ];
    (Complex64::new(ir, ii), d)
}
