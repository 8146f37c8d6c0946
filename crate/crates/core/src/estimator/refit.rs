//! Maximum-likelihood gain refit under the quantized Gaussian likelihood.
//!
//! The log-likelihood is concave in the gains, so a damped Newton iteration
//! with an Armijo backtracking line search converges to the global maximizer
//! from any warm start and never decreases the objective.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::quantizer::{box_terms, QuantizedObservation, NOISE_SIGMA};

/// Condition number of the atom Gram matrix above which the support is
/// reported as degenerate.
pub const DEGENERATE_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitOutcome {
    pub gains: Vec<Complex64>,
    pub loglik_start: f64,
    pub loglik_end: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Atoms were nearly collinear on the fitted rows.
    pub degenerate: bool,
}

/// Rows of the problem gathered once: restricted atoms and boxes.
struct Restricted {
    atoms: DMatrix<Complex64>,
    lo: Vec<Complex64>,
    up: Vec<Complex64>,
}

impl Restricted {
    fn new(atoms: &DMatrix<Complex64>, obs: &QuantizedObservation, rows: &[usize]) -> Self {
        let p = atoms.ncols();
        Self {
            atoms: DMatrix::from_fn(rows.len(), p, |i, j| atoms[(rows[i], j)]),
            lo: rows.iter().map(|&i| obs.lo[i]).collect(),
            up: rows.iter().map(|&i| obs.up[i]).collect(),
        }
    }

    fn loglik(&self, w: &DVector<f64>) -> f64 {
        let x = to_complex(w);
        (0..self.atoms.nrows())
            .map(|i| {
                let mu = self.mean(i, &x);
                box_terms(self.lo[i].re, self.up[i].re, mu.re, NOISE_SIGMA).logp
                    + box_terms(self.lo[i].im, self.up[i].im, mu.im, NOISE_SIGMA).logp
            })
            .sum()
    }

    #[inline]
    fn mean(&self, i: usize, x: &[Complex64]) -> Complex64 {
        x.iter().enumerate().map(|(j, xj)| self.atoms[(i, j)] * xj).sum()
    }

    /// Value, real gradient and real Hessian in `w = [Re x; Im x]`.
    fn evaluate(&self, w: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.atoms.ncols();
        let x = to_complex(w);
        let mut value = 0.0;
        let mut grad = DVector::zeros(2 * p);
        let mut hess = DMatrix::zeros(2 * p, 2 * p);
        let mut r = DVector::zeros(2 * p);
        let mut s = DVector::zeros(2 * p);
        for i in 0..self.atoms.nrows() {
            let mu = self.mean(i, &x);
            let br = box_terms(self.lo[i].re, self.up[i].re, mu.re, NOISE_SIGMA);
            let bi = box_terms(self.lo[i].im, self.up[i].im, mu.im, NOISE_SIGMA);
            value += br.logp + bi.logp;
            // Re(mu) = r . w and Im(mu) = s . w.
            for j in 0..p {
                let a = self.atoms[(i, j)];
                r[j] = a.re;
                r[p + j] = -a.im;
                s[j] = a.im;
                s[p + j] = a.re;
            }
            grad.axpy(br.d1, &r, 1.0);
            grad.axpy(bi.d1, &s, 1.0);
            hess.ger(br.d2, &r, &r, 1.0);
            hess.ger(bi.d2, &s, &s, 1.0);
        }
        (value, grad, hess)
    }

    /// Condition number of the real embedding of `A^H A`.
    fn gram_condition(&self) -> f64 {
        let p = self.atoms.ncols();
        if p == 0 {
            return 1.0;
        }
        let g = self.atoms.ad_mul(&self.atoms);
        let real = DMatrix::from_fn(2 * p, 2 * p, |i, j| {
            let (bi, bj) = (i / p, j / p);
            let v = g[(i % p, j % p)];
            match (bi, bj) {
                (0, 0) | (1, 1) => v.re,
                (0, 1) => -v.im,
                _ => v.im,
            }
        });
        let eig = SymmetricEigen::new(real).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

fn to_complex(w: &DVector<f64>) -> Vec<Complex64> {
    let p = w.len() / 2;
    (0..p).map(|j| Complex64::new(w[j], w[p + j])).collect()
}

/// Maximizes the quantized log-likelihood over the gains of the columns of
/// `atoms` (full-length rows), using only `rows`, starting from `warm`.
pub fn maximize_gain_likelihood(
    atoms: &DMatrix<Complex64>,
    obs: &QuantizedObservation,
    rows: &[usize],
    warm: &[Complex64],
    tol: f64,
    max_iters: usize,
) -> Result<RefitOutcome> {
    if atoms.nrows() != obs.len() || atoms.ncols() != warm.len() {
        return input("atom matrix, observation and warm start disagree in size");
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= obs.len()) {
        return input(format!("row {r} out of range"));
    }
    let prob = Restricted::new(atoms, obs, rows);
    let p = warm.len();
    let mut w = DVector::from_iterator(2 * p, warm.iter().map(|v| v.re).chain(warm.iter().map(|v| v.im)));
    let degenerate = prob.gram_condition() > DEGENERATE_CONDITION;

    let (mut value, mut grad, mut hess) = prob.evaluate(&w);
    let loglik_start = value;
    let mut iterations = 0;
    let mut converged = grad.norm() <= tol;
    while !converged && iterations < max_iters {
        iterations += 1;
        let neg = -&hess;
        let scale = neg.diagonal().max().max(f64::MIN_POSITIVE);
        let mut damping = if degenerate { 1e-8 } else { 1e-12 } * scale;
        let step = loop {
            let mut sys = neg.clone();
            for j in 0..2 * p {
                sys[(j, j)] += damping;
            }
            if let Some(ch) = Cholesky::new(sys) {
                break ch.solve(&grad);
            }
            damping *= 10.0;
            if !damping.is_finite() {
                break grad.clone();
            }
        };
        let slope = grad.dot(&step);
        if !(slope > 0.0) {
            break;
        }
        // Gains below this are lost in the rounding of the objective, so
        // backtracking on them would only follow noise.
        let resolution = 64.0 * f64::EPSILON * value.abs().max(1.0);
        let mut next = None;
        if slope > resolution {
            let mut t = 1.0;
            while t > 1e-12 {
                let cand = &w + &step * t;
                let v = prob.loglik(&cand);
                if v >= value + 1e-4 * t * slope {
                    next = Some(cand);
                    break;
                }
                t *= 0.5;
            }
        } else {
            // Take the full Newton step as long as the value does not drop.
            let cand = &w + &step;
            if prob.loglik(&cand) >= value {
                next = Some(cand);
            }
        }
        let Some(cand) = next else {
            // No representable ascent left: numerically at the optimum.
            converged = slope <= resolution;
            break;
        };
        w = cand;
        (value, grad, hess) = prob.evaluate(&w);
        converged = grad.norm() <= tol;
    }
    Ok(RefitOutcome {
        gains: to_complex(&w),
        loglik_start,
        loglik_end: value,
        grad_norm: grad.norm(),
        iterations,
        converged,
        degenerate,
    })
}
