//! Single-path selection score, its angle/delay derivatives, the coarse grid
//! search and the Newton refinement over the continuum.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{rc_pulse_jet, steering_jet};
use crate::error::{input, Result};
use crate::measurement::{apply_adjoint, MeasurementModel};
use crate::quantizer::{residual_weights, QuantizedObservation};

use super::{CvSplit, EstimatorConfig, PathEstimate};

/// Score `f_z(theta, tau, k) = |a(theta, tau, k)^H e|^2`, where `e` holds the
/// slopes of the estimation-row box log-likelihoods at the current mean `z`.
/// That is the squared magnitude of the gain-derivative of the likelihood of
/// one more path evaluated at zero gain.
///
/// The context stores `A_bar^H e` (the layout of `h`), so each evaluation
/// costs `O(D M)` instead of `O(R N)`.
///
/// With an [`AtomEnergy`] attached the score is divided by the atom's energy
/// on the estimation rows, which makes it the squared gain-derivative for a
/// unit-norm atom. Without it the energy varies with the delay (the tap
/// window truncates the pulse), which biases the maximizer.
pub struct ScoreContext<'a> {
    model: &'a MeasurementModel,
    backprojection: Vec<Complex64>,
    energy: Option<&'a AtomEnergy>,
}

/// `||a(theta, tau, k)||^2` over a slot subset, stored as the quadratic forms
/// `Q[k][d][d'] = sum_n s_k[n-d] conj(s_k[n-d']) W[n] W[n]^H` so that
/// `||a||^2 = sum_{d,d'} p_d p_d' a(theta)^H Q a(theta)`.
#[derive(Debug, Clone)]
pub struct AtomEnergy {
    users: usize,
    taps: usize,
    forms: Vec<DMatrix<Complex64>>,
}

impl AtomEnergy {
    pub fn new(model: &MeasurementModel, slots: &[usize]) -> Self {
        let (m, users, taps) = (model.antennas(), model.users(), model.taps());
        let mut forms = vec![DMatrix::zeros(m, m); users * taps * taps];
        for &n in slots {
            let w = model.combiners.matrix(n);
            let proj = w * w.adjoint();
            for k in 0..users {
                let s: Vec<Complex64> = (0..taps).map(|d| model.pilots.symbol(k, n as i64 - d as i64)).collect();
                for d in 0..taps {
                    for e in 0..taps {
                        let coef = s[d] * s[e].conj();
                        forms[(k * taps + d) * taps + e] += &proj * coef;
                    }
                }
            }
        }
        Self { users, taps, forms }
    }

    fn form(&self, k: usize, d: usize, e: usize) -> &DMatrix<Complex64> {
        &self.forms[(k * self.taps + d) * self.taps + e]
    }

    /// `a^H Q[k][d][e] a` for all `(d, e)` together with the first two
    /// `theta` derivatives, row-major in `(d, e)`.
    fn angle_forms(&self, theta: f64, k: usize, order: usize) -> [Vec<Complex64>; 3] {
        let m = self.forms[0].nrows();
        let (a, da, dda) = steering_jet(theta, m);
        let (a, da, dda) = (DVector::from_vec(a), DVector::from_vec(da), DVector::from_vec(dda));
        let n = self.taps * self.taps;
        let mut out = [vec![Complex64::new(0.0, 0.0); n], Vec::new(), Vec::new()];
        if order >= 1 {
            out[1] = vec![Complex64::new(0.0, 0.0); n];
            out[2] = vec![Complex64::new(0.0, 0.0); n];
        }
        for d in 0..self.taps {
            for e in 0..self.taps {
                let q = self.form(k, d, e);
                let qa = q * &a;
                let i = d * self.taps + e;
                out[0][i] = a.dotc(&qa);
                if order >= 1 {
                    let qda = q * &da;
                    out[1][i] = da.dotc(&qa) + a.dotc(&qda);
                    out[2][i] = dda.dotc(&qa) + 2.0 * da.dotc(&qda) + a.dotc(&(q * &dda));
                }
            }
        }
        out
    }

    /// Energy `N` with gradient and Hessian in `(theta, tau [s])`.
    fn jet(&self, model: &MeasurementModel, theta: f64, tau: f64, k: usize, order: usize) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let [u, du, ddu] = self.angle_forms(theta, k, order);
        let ts = model.pulse.sample_period;
        // Jets of p(d T_s - tau) in tau.
        let p: Vec<[f64; 3]> = (0..self.taps)
            .map(|d| {
                let [v, dv, ddv] = rc_pulse_jet(d as f64 * ts - tau, &model.pulse);
                [v, -dv, ddv]
            })
            .collect();
        let (mut n, mut g, mut h) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
        for d in 0..self.taps {
            for e in 0..self.taps {
                let i = d * self.taps + e;
                let (pd, pe) = (p[d], p[e]);
                let w = pd[0] * pe[0];
                n += w * u[i].re;
                if order >= 1 {
                    let wt = pd[1] * pe[0] + pd[0] * pe[1];
                    let wtt = pd[2] * pe[0] + 2.0 * pd[1] * pe[1] + pd[0] * pe[2];
                    g[0] += w * du[i].re;
                    g[1] += wt * u[i].re;
                    h[0][0] += w * ddu[i].re;
                    h[0][1] += wt * du[i].re;
                    h[1][1] += wtt * u[i].re;
                }
            }
        }
        h[1][0] = h[0][1];
        (n, g, h)
    }

    pub fn energy(&self, model: &MeasurementModel, theta: f64, tau: f64, k: usize) -> f64 {
        self.jet(model, theta, tau, k, 0).0
    }

    pub fn users(&self) -> usize {
        self.users
    }
}

impl<'a> ScoreContext<'a> {
    /// `mean` is the full-length `z = A(P) alpha`; only estimation rows are used.
    pub fn new(
        model: &'a MeasurementModel,
        obs: &QuantizedObservation,
        split: &CvSplit,
        mean: &[Complex64],
    ) -> Result<Self> {
        if obs.len() != model.rows() || mean.len() != model.rows() {
            return input("observation, mean and model disagree on the block length");
        }
        let weights = residual_weights(obs, mean, &split.est_rows);
        let mut e = vec![Complex64::new(0.0, 0.0); model.rows()];
        for (&i, w) in split.est_rows.iter().zip(weights) {
            e[i] = w;
        }
        let backprojection = apply_adjoint(&e, model, &split.est_slots)?;
        Ok(Self {
            model,
            backprojection,
            energy: None,
        })
    }

    /// Divides the score by the atom energy from `energy`, which must have
    /// been built over the estimation slots of the same split.
    pub fn normalized(mut self, energy: &'a AtomEnergy) -> Self {
        self.energy = Some(energy);
        self
    }

    pub fn model(&self) -> &MeasurementModel {
        self.model
    }

    fn block(&self, k: usize, d: usize) -> &[Complex64] {
        let m = self.model.antennas();
        let start = m * (k + self.model.users() * d);
        &self.backprojection[start..start + m]
    }

    fn check(&self, theta: f64, tau: f64, k: usize) -> Result<()> {
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta)
            || !(0.0..=self.model.pulse.max_delay()).contains(&tau)
            || k >= self.model.users()
        {
            return input(format!("({theta}, {tau}, {k}) outside the parameter box"));
        }
        Ok(())
    }

    /// Correlation `c = a^H e` and, to the requested order, its partials
    /// `[c, c_theta, c_tau, c_theta2, c_theta_tau, c_tau2]`.
    fn correlation_jet(&self, theta: f64, tau: f64, k: usize, order: usize) -> [Complex64; 6] {
        let m = self.model.antennas();
        let (a, da, dda) = steering_jet(theta, m);
        let dot = |v: &[Complex64], g: &[Complex64]| -> Complex64 {
            v.iter().zip(g).map(|(x, y)| x.conj() * y).sum()
        };
        let ts = self.model.pulse.sample_period;
        let mut out = [Complex64::new(0.0, 0.0); 6];
        for d in 0..self.model.taps() {
            let g = self.block(k, d);
            let [p, dp, ddp] = rc_pulse_jet(d as f64 * ts - tau, &self.model.pulse);
            let q = dot(&a, g);
            out[0] += q * p;
            if order >= 1 {
                let dq = dot(&da, g);
                out[1] += dq * p;
                out[2] -= q * dp;
                if order >= 2 {
                    out[3] += dot(&dda, g) * p;
                    out[4] -= dq * dp;
                    out[5] += q * ddp;
                }
            }
        }
        out
    }

    pub(crate) fn score_unchecked(&self, theta: f64, tau: f64, k: usize) -> f64 {
        let f = self.correlation_jet(theta, tau, k, 0)[0].norm_sqr();
        match self.energy {
            None => f,
            Some(en) => ratio(f, en.energy(self.model, theta, tau, k)),
        }
    }

    /// `(f, grad, hessian)` in `(theta [rad], tau [s])` coordinates.
    pub(crate) fn jet_unchecked(&self, theta: f64, tau: f64, k: usize) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let [c, ct, cs, ctt, cts, css] = self.correlation_jet(theta, tau, k, 2);
        let re2 = |a: Complex64, b: Complex64| 2.0 * (a.conj() * b).re;
        let grad = [re2(c, ct), re2(c, cs)];
        let h_tt = re2(ct, ct) + re2(c, ctt);
        let h_ts = re2(ct, cs) + re2(c, cts);
        let h_ss = re2(cs, cs) + re2(c, css);
        let (f, hess) = (c.norm_sqr(), [[h_tt, h_ts], [h_ts, h_ss]]);
        let Some(en) = self.energy else {
            return (f, grad, hess);
        };
        let (n, gn, hn) = en.jet(self.model, theta, tau, k, 2);
        if !(n > 0.0) {
            return (0.0, [0.0; 2], [[0.0; 2]; 2]);
        }
        // Quotient rule for F = f / N.
        let q = f / n;
        let gq = [(grad[0] - q * gn[0]) / n, (grad[1] - q * gn[1]) / n];
        let mut hq = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                hq[i][j] = (hess[i][j] - gq[i] * gn[j] - gn[i] * gq[j] - q * hn[i][j]) / n;
            }
        }
        (q, gq, hq)
    }
}

#[inline]
fn ratio(f: f64, n: f64) -> f64 {
    if n > 0.0 {
        f / n
    } else {
        0.0
    }
}

pub fn score(theta: f64, tau: f64, k: usize, ctx: &ScoreContext) -> Result<f64> {
    ctx.check(theta, tau, k)?;
    Ok(ctx.score_unchecked(theta, tau, k))
}

/// Exact gradient and Hessian of [`score`] with respect to `(theta, tau)`,
/// with `tau` in seconds.
pub fn score_gradient_hessian(
    theta: f64,
    tau: f64,
    k: usize,
    ctx: &ScoreContext,
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    ctx.check(theta, tau, k)?;
    let (_, g, h) = ctx.jet_unchecked(theta, tau, k);
    Ok((g, h))
}

/// Discretized parameter set `theta x tau x users`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub theta_points: Vec<f64>,
    pub tau_points: Vec<f64>,
    pub users: usize,
}

impl Grid {
    /// `factors.0 * M` angles spaced uniformly from `-pi/2` (the `+pi/2`
    /// endpoint is omitted: both ends share one array response) and
    /// `factors.1 * D` delays spanning `[0, (D-1) T_s]` inclusive.
    pub fn new(model: &MeasurementModel, factors: (usize, usize)) -> Self {
        let n_theta = (factors.0 * model.antennas()).max(2);
        let n_tau = (factors.1 * model.taps()).max(2);
        let max_delay = model.pulse.max_delay();
        Self {
            theta_points: (0..n_theta)
                .map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / n_theta as f64)
                .collect(),
            tau_points: (0..n_tau)
                .map(|j| max_delay * j as f64 / (n_tau - 1) as f64)
                .collect(),
            users: model.users(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta_points.len() * self.tau_points.len() * self.users
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grid maximizer of the score. Points are visited in lexicographic
/// `(theta, tau, user)` index order and only a strictly larger score
/// replaces the incumbent, so ties resolve to the lowest index.
pub fn coarse_select(grid: &Grid, ctx: &ScoreContext) -> Result<(PathEstimate, f64)> {
    if grid.is_empty() {
        return input("empty search grid");
    }
    let model = ctx.model();
    let (m, taps) = (model.antennas(), model.taps());
    let ts = model.pulse.sample_period;
    let pulse_rows: Vec<Vec<f64>> = grid
        .tau_points
        .iter()
        .map(|&tau| {
            (0..taps)
                .map(|d| rc_pulse_jet(d as f64 * ts - tau, &model.pulse)[0])
                .collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize, 0usize);
    let mut q = vec![Complex64::new(0.0, 0.0); grid.users * taps];
    let mut forms: Vec<Vec<Complex64>> = vec![Vec::new(); grid.users];
    for (i, &theta) in grid.theta_points.iter().enumerate() {
        let a = steering_jet(theta, m).0;
        for k in 0..grid.users {
            for d in 0..taps {
                q[k * taps + d] = a.iter().zip(ctx.block(k, d)).map(|(x, y)| x.conj() * y).sum();
            }
            if let Some(en) = ctx.energy {
                let [u, _, _] = en.angle_forms(theta, k, 0);
                forms[k] = u;
            }
        }
        for (j, weights) in pulse_rows.iter().enumerate() {
            for k in 0..grid.users {
                let c: Complex64 = weights
                    .iter()
                    .zip(&q[k * taps..(k + 1) * taps])
                    .map(|(w, v)| v * w)
                    .sum();
                let mut f = c.norm_sqr();
                if ctx.energy.is_some() {
                    let mut n = 0.0;
                    for d in 0..taps {
                        for e in 0..taps {
                            n += weights[d] * weights[e] * forms[k][d * taps + e].re;
                        }
                    }
                    f = ratio(f, n);
                }
                if f > best.0 {
                    best = (f, i, j, k);
                }
            }
        }
    }
    let (f, i, j, k) = best;
    Ok((
        PathEstimate {
            aoa: grid.theta_points[i],
            delay: grid.tau_points[j],
            user: k,
        },
        f,
    ))
}

/// Result of refining one coarse estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub path: PathEstimate,
    pub score_start: f64,
    pub score_end: f64,
    /// Score before and after every accepted step.
    pub steps: Vec<(f64, f64)>,
    pub newton_steps: usize,
    pub gradient_steps: usize,
}

/// Newton ascent on `f` over `(theta, tau)` with the user fixed.
///
/// Works internally with `tau` measured in sample periods; see [`ascend`]
/// for the step rule.
pub fn newton_refine(start: PathEstimate, ctx: &ScoreContext, cfg: &EstimatorConfig) -> Result<Refinement> {
    ctx.check(start.aoa, start.delay, start.user)?;
    let model = ctx.model();
    let ts = model.pulse.sample_period;
    let k = start.user;
    let x0 = [start.aoa, start.delay / ts];
    let f0 = ctx.score_unchecked(x0[0], x0[1] * ts, k);
    let run = ascend(
        x0,
        f0,
        (model.taps() - 1) as f64,
        cfg,
        |x| ctx.score_unchecked(x[0], x[1] * ts, k),
        |x| {
            let (_, g, h) = ctx.jet_unchecked(x[0], x[1] * ts, k);
            // Rescale to (rad, samples).
            ([g[0], g[1] * ts], [[h[0][0], h[0][1] * ts], [h[1][0] * ts, h[1][1] * ts * ts]])
        },
    );
    Ok(Refinement {
        path: PathEstimate {
            aoa: run.x[0],
            delay: run.x[1] * ts,
            user: k,
        },
        score_start: f0,
        score_end: run.f,
        steps: run.steps,
        newton_steps: run.newton_steps,
        gradient_steps: run.gradient_steps,
    })
}

pub(crate) struct Ascent {
    pub x: [f64; 2],
    pub f: f64,
    pub steps: Vec<(f64, f64)>,
    pub newton_steps: usize,
    pub gradient_steps: usize,
}

/// Maximizes a smooth objective over `[-pi/2, pi/2] x [0, tau_max]`.
///
/// A Newton step is taken when both Hessian eigenvalues are below `-1e-12`;
/// otherwise the gradient is scaled by the inverse of the largest Hessian
/// eigenvalue magnitude. Each step backtracks from `eta = 1` by halving until
/// the objective strictly increases and is abandoned below the configured
/// floor. Iterates are clamped to the box.
pub(crate) fn ascend<F, J>(x0: [f64; 2], f0: f64, tau_max: f64, cfg: &EstimatorConfig, eval: F, jet: J) -> Ascent
where
    F: Fn([f64; 2]) -> f64,
    J: Fn([f64; 2]) -> ([f64; 2], [[f64; 2]; 2]),
{
    let clamp = |x: [f64; 2]| [x[0].clamp(-FRAC_PI_2, FRAC_PI_2), x[1].clamp(0.0, tau_max)];
    let (mut x, mut f) = (x0, f0);
    let mut steps = Vec::new();
    let (mut newton_steps, mut gradient_steps) = (0, 0);

    for _ in 0..cfg.newton_max_iters {
        let (g, h) = jet(x);
        let (l1, l2) = sym2_eigenvalues(h);
        let newton = l1 < -1e-12 && l2 < -1e-12;
        let dir = if newton {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            [
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
            ]
        } else {
            let scale = l1.abs().max(l2.abs());
            if scale > 0.0 {
                [g[0] / scale, g[1] / scale]
            } else {
                let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
                if n == 0.0 {
                    break;
                }
                [g[0] / n, g[1] / n]
            }
        };
        if !(dir[0].is_finite() && dir[1].is_finite()) {
            break;
        }
        let mut eta = 1.0;
        let mut accepted = None;
        while eta >= cfg.line_search_floor {
            let cand = clamp([x[0] + eta * dir[0], x[1] + eta * dir[1]]);
            let fc = eval(cand);
            if fc > f {
                accepted = Some((cand, fc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let moved = ((cand[0] - x[0]).powi(2) + (cand[1] - x[1]).powi(2)).sqrt();
        steps.push((f, fc));
        if newton {
            newton_steps += 1;
        } else {
            gradient_steps += 1;
        }
        x = cand;
        f = fc;
        if moved < cfg.newton_step_tol {
            break;
        }
    }
    Ascent {
        x,
        f,
        steps,
        newton_steps,
        gradient_steps,
    }
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
fn sym2_eigenvalues(h: [[f64; 2]; 2]) -> (f64, f64) {
    let mean = 0.5 * (h[0][0] + h[1][1]);
    let half_diff = 0.5 * (h[0][0] - h[1][1]);
    let r = half_diff.hypot(0.5 * (h[0][1] + h[1][0]));
    (mean - r, mean + r)
}
