//! Cyclic refinement of already selected path locations against the
//! quantized likelihood itself.
//!
//! The selection score is the likelihood slope at zero gain, so its maximizer
//! is only close to the joint maximum-likelihood location. Once gains are
//! fitted, each path in turn climbs the estimation-row likelihood jointly in
//! its location and gain with the other paths held fixed. Moving the angle
//! rotates the phase of the atom, so the gain has to move with it.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::Result;
use crate::measurement::MeasurementModel;
use crate::quantizer::{box_terms, QuantizedObservation, NOISE_SIGMA};

use super::{EstimatorConfig, PathEstimate};

/// Estimation-row likelihood as a function of one path's location and gain,
/// `x = [theta, tau / T_s, Re alpha, Im alpha]`.
struct PathSlice<'a> {
    model: &'a MeasurementModel,
    obs: &'a QuantizedObservation,
    rows: &'a [usize],
    /// Mean of all other paths on `rows`.
    others: Vec<Complex64>,
    user: usize,
    tau_max: f64,
}

impl PathSlice<'_> {
    fn clamp(&self, mut x: DVector<f64>) -> DVector<f64> {
        x[0] = x[0].clamp(-FRAC_PI_2, FRAC_PI_2);
        x[1] = x[1].clamp(0.0, self.tau_max);
        x
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let ts = self.model.pulse.sample_period;
        let gain = Complex64::new(x[2], x[3]);
        let a = &self.model.atom_jet(x[0], x[1] * ts, self.user, 0)[0];
        self.rows
            .iter()
            .zip(&self.others)
            .map(|(&i, z)| {
                let mu = z + gain * a[i];
                let (lo, up) = (self.obs.lo[i], self.obs.up[i]);
                box_terms(lo.re, up.re, mu.re, NOISE_SIGMA).logp + box_terms(lo.im, up.im, mu.im, NOISE_SIGMA).logp
            })
            .sum()
    }

    fn jet(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let ts = self.model.pulse.sample_period;
        let gain = Complex64::new(x[2], x[3]);
        let j = Complex64::new(0.0, 1.0);
        let jet = self.model.atom_jet(x[0], x[1] * ts, self.user, 2);
        let mut g = DVector::zeros(4);
        let mut h = DMatrix::zeros(4, 4);
        let zero = Complex64::new(0.0, 0.0);
        for (&i, z) in self.rows.iter().zip(&self.others) {
            let a = jet[0][i];
            let (at, as_) = (jet[1][i], jet[2][i] * ts);
            let (att, ats, ass) = (jet[3][i], jet[4][i] * ts, jet[5][i] * ts * ts);
            let mu = z + gain * a;
            let (lo, up) = (self.obs.lo[i], self.obs.up[i]);
            let br = box_terms(lo.re, up.re, mu.re, NOISE_SIGMA);
            let bi = box_terms(lo.im, up.im, mu.im, NOISE_SIGMA);
            // First and second partials of the mean.
            let w = [gain * at, gain * as_, a, j * a];
            let ww = [
                [gain * att, gain * ats, at, j * at],
                [gain * ats, gain * ass, as_, j * as_],
                [at, as_, zero, zero],
                [j * at, j * as_, zero, zero],
            ];
            for p in 0..4 {
                g[p] += br.d1 * w[p].re + bi.d1 * w[p].im;
                for q in 0..4 {
                    h[(p, q)] += br.d2 * w[p].re * w[q].re
                        + bi.d2 * w[p].im * w[q].im
                        + br.d1 * ww[p][q].re
                        + bi.d1 * ww[p][q].im;
                }
            }
        }
        (g, h)
    }

    /// Newton ascent with the same acceptance rules as the location
    /// refinement. Returns the final point, its value and the accepted steps.
    fn ascend(&self, mut x: DVector<f64>, cfg: &EstimatorConfig) -> (DVector<f64>, f64, usize) {
        let mut f = self.value(&x);
        let mut accepted_steps = 0;
        for _ in 0..cfg.newton_max_iters {
            let (g, h) = self.jet(&x);
            let eig = SymmetricEigen::new(h.clone()).eigenvalues;
            let dir = if eig.max() < -1e-12 {
                match (-h).cholesky() {
                    Some(ch) => ch.solve(&g),
                    None => break,
                }
            } else {
                let scale = eig.amax();
                if scale > 0.0 {
                    &g / scale
                } else {
                    break;
                }
            };
            if !dir.iter().all(|v| v.is_finite()) {
                break;
            }
            let mut eta = 1.0;
            let mut next = None;
            while eta >= cfg.line_search_floor {
                let cand = self.clamp(&x + &dir * eta);
                let fc = self.value(&cand);
                if fc > f {
                    next = Some((cand, fc));
                    break;
                }
                eta *= 0.5;
            }
            let Some((cand, fc)) = next else { break };
            let moved = (cand.rows(0, 2) - x.rows(0, 2)).norm();
            x = cand;
            f = fc;
            accepted_steps += 1;
            if moved < cfg.newton_step_tol {
                break;
            }
        }
        (x, f, accepted_steps)
    }
}

/// One pass over the support. Updates locations, gains and atom columns in
/// place and returns the estimation-row log-likelihood before and after.
pub(crate) fn polish_locations(
    support: &mut [PathEstimate],
    columns: &mut [Vec<Complex64>],
    gains: &mut [Complex64],
    model: &MeasurementModel,
    obs: &QuantizedObservation,
    rows: &[usize],
    cfg: &EstimatorConfig,
) -> Result<(f64, f64)> {
    let ts = model.pulse.sample_period;
    let mut mean: Vec<Complex64> = rows
        .iter()
        .map(|&i| columns.iter().zip(gains.iter()).map(|(c, g)| c[i] * g).sum())
        .collect();
    let mut start = None;
    let mut value = f64::NAN;
    for l in 0..support.len() {
        let others: Vec<Complex64> = rows
            .iter()
            .zip(&mean)
            .map(|(&i, m)| m - gains[l] * columns[l][i])
            .collect();
        let slice = PathSlice {
            model,
            obs,
            rows,
            others,
            user: support[l].user,
            tau_max: (model.taps() - 1) as f64,
        };
        let x0 = DVector::from_vec(vec![support[l].aoa, support[l].delay / ts, gains[l].re, gains[l].im]);
        start.get_or_insert_with(|| slice.value(&x0));
        let (x, f, steps) = slice.ascend(x0, cfg);
        value = f;
        if steps == 0 {
            continue;
        }
        support[l].aoa = x[0];
        support[l].delay = x[1] * ts;
        gains[l] = Complex64::new(x[2], x[3]);
        columns[l] = model.atom_jet(support[l].aoa, support[l].delay, support[l].user, 0).swap_remove(0);
        for ((m, z), &i) in mean.iter_mut().zip(&slice.others).zip(rows) {
            *m = z + gains[l] * columns[l][i];
        }
    }
    Ok((start.unwrap_or(value), value))
}
