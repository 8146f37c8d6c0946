//! Numerical self-checks: every analytic derivative against central finite
//! differences and the fast operators against dense reference constructions.
//! Used by the `selftest` command and the acceptance suite.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array::{ArraySpec, PulseSpec};
use crate::error::Result;
use crate::estimator::{
    maximize_gain_likelihood, score, score_gradient_hessian, split_data, AtomEnergy, ScoreContext,
};
use crate::measurement::{
    apply_forward, atom, atom_jacobian, build_combiners, build_pilots, MeasurementModel,
    TrainingConfig,
};
use crate::oracle::{dense_atom, dense_operator, relative_error};
use crate::quantizer::{
    box_loglik, design_quantizer, gain_gradient, log_likelihood, quantize, MAX_BITS,
};
use crate::seed::derive_seed;

/// Outcome of one family of checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    /// Largest error seen, in the units the tolerance is stated in.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn from_errors(name: &'static str, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let finite = errors.iter().all(|e| e.is_finite());
        Self {
            name,
            instances: errors.len(),
            worst,
            tolerance,
            passed: finite && worst < tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} n={:<6} worst={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )
    }
}

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `|a - b| / max(|b|, floor)`.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

const TS: f64 = 1.0 / 600e6;

/// A small random measurement setup.
pub fn small_model(
    antennas: usize,
    rf_chains: usize,
    users: usize,
    taps: usize,
    slots: usize,
    snr: f64,
    seed: u64,
) -> Result<MeasurementModel> {
    let pulse = PulseSpec::new(PulseSpec::DEFAULT_ROLLOFF, TS, taps)?;
    let pilots = build_pilots(&TrainingConfig::evenly_spaced(users, slots, snr), taps)?;
    let combiners = build_combiners(antennas, rf_chains, slots, seed)?;
    MeasurementModel::new(ArraySpec::new(antennas)?, pulse, pilots, combiners)
}

/// d1 against the difference of log-probabilities and d2 against the
/// difference of d1, on random boxes with the mean within 6 sigma.
pub fn check_box_derivatives(instances: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e1 = Vec::with_capacity(instances);
    let mut e2 = Vec::with_capacity(instances);
    for _ in 0..instances {
        let sigma = 10f64.powf(rng.random_range(-1.0..0.3));
        let width = sigma * 10f64.powf(rng.random_range(-2.0..0.7));
        let mut lo = sigma * rng.random_range(-4.0..4.0);
        let mut up = lo + width;
        let (a, b) = (lo - 6.0 * sigma, up + 6.0 * sigma);
        match rng.random_range(0..6) {
            0 => lo = f64::NEG_INFINITY,
            1 => up = f64::INFINITY,
            _ => {}
        }
        let mu = rng.random_range(a..b);
        let h = 1e-5 * sigma;
        let at = box_loglik(lo, up, mu, sigma)?;
        let plus = box_loglik(lo, up, mu + h, sigma)?;
        let minus = box_loglik(lo, up, mu - h, sigma)?;
        e1.push(rel(at.d1, (plus.logp - minus.logp) / (2.0 * h), 1e-3 / sigma));
        e2.push(rel(at.d2, (plus.d1 - minus.d1) / (2.0 * h), 1e-3 / (sigma * sigma)));
    }
    Ok([
        Check::from_errors("box_loglik.d1", &e1, 1e-6),
        Check::from_errors("box_loglik.d2", &e2, 1e-4),
    ])
}

/// Gain gradient against coordinate-wise differences of the likelihood.
pub fn check_gain_gradient(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let rows = rng.random_range(8..48);
        let p = rng.random_range(1..5);
        let scale = 1.0 / (p as f64).sqrt();
        let atoms = DMatrix::from_fn(rows, p, |_, _| cn(&mut rng) * scale);
        let x: Vec<Complex64> = (0..p).map(|_| cn(&mut rng)).collect();
        let y: Vec<Complex64> = (0..rows).map(|_| cn(&mut rng) * 1.5).collect();
        let spec = design_quantizer(rng.random_range(1..5), 0.75)?;
        let obs = quantize(&y, &spec)?;
        let all: Vec<usize> = (0..rows).collect();
        let grad = gain_gradient(&x, &atoms, &obs, &all)?;
        let h = 1e-5;
        let g = |x: &[Complex64]| log_likelihood(x, &atoms, &obs, &all);
        let mut fd = Vec::with_capacity(p);
        for j in 0..p {
            let mut part = [0.0; 2];
            for (c, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += dir * h;
                xm[j] -= dir * h;
                part[c] = (g(&xp)? - g(&xm)?) / (2.0 * h);
            }
            fd.push(Complex64::new(part[0], part[1]));
        }
        errors.push(relative_error(&grad, &fd));
    }
    Ok(Check::from_errors("gain_gradient", &errors, 1e-6))
}

fn random_location(rng: &mut ChaCha8Rng, model: &MeasurementModel, margin: f64) -> (f64, f64, usize) {
    let theta = rng.random_range(-1.5..1.5);
    let d = (model.taps() - 1) as f64;
    let tau = rng.random_range(margin..d - margin) * model.pulse.sample_period;
    (theta, tau, rng.random_range(0..model.users()))
}

/// Both atom partials against central differences (steps 1e-6 rad, 1e-6 T_s).
pub fn check_atom_jacobian(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for i in 0..instances {
        let model = small_model(8, 4, 2, 4, 16, 2.0, derive_seed(seed, &[i as u64]))?;
        let (theta, tau, k) = random_location(&mut rng, &model, 0.01);
        let (dt, ds) = atom_jacobian(theta, tau, k, &model)?;
        let ht = 1e-6;
        let hs = 1e-6 * model.pulse.sample_period;
        let fd_t: Vec<_> = atom(theta + ht, tau, k, &model)?
            .iter()
            .zip(atom(theta - ht, tau, k, &model)?)
            .map(|(a, b)| (a - b) / (2.0 * ht))
            .collect();
        let fd_s: Vec<_> = atom(theta, tau + hs, k, &model)?
            .iter()
            .zip(atom(theta, tau - hs, k, &model)?)
            .map(|(a, b)| (a - b) / (2.0 * hs))
            .collect();
        errors.push(relative_error(&dt, &fd_t).max(relative_error(&ds, &fd_s)));
    }
    Ok(Check::from_errors("atom_jacobian", &errors, 1e-6))
}

/// Score gradient against differences of the score, Hessian against
/// differences of the gradient. Compared in `(theta, tau / T_s)` so both
/// axes carry comparable weight. Even instances use the energy-normalized
/// score, odd ones the raw one.
pub fn check_score_derivatives(instances: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eg = Vec::with_capacity(instances);
    let mut eh = Vec::with_capacity(instances);
    for i in 0..instances {
        let model = small_model(8, 4, 2, 3, 20, 2.0, derive_seed(seed, &[i as u64]))?;
        let y: Vec<Complex64> = (0..model.rows()).map(|_| cn(&mut rng) * 2.0).collect();
        let obs = quantize(&y, &design_quantizer(rng.random_range(1..5), 1.4)?)?;
        let split = split_data(model.rows(), model.rf_chains(), 0.8, rng.random())?;
        let mean: Vec<Complex64> = (0..model.rows()).map(|_| cn(&mut rng) * 0.5).collect();
        let energy = AtomEnergy::new(&model, &split.est_slots);
        let ctx = ScoreContext::new(&model, &obs, &split, &mean)?;
        let ctx = if i % 2 == 0 { ctx.normalized(&energy) } else { ctx };
        let ts = model.pulse.sample_period;
        let (theta, tau, k) = random_location(&mut rng, &model, 0.01);

        let normalized = |t: f64, s: f64| -> Result<([f64; 2], [[f64; 2]; 2])> {
            let (g, h) = score_gradient_hessian(t, s * ts, k, &ctx)?;
            Ok((
                [g[0], g[1] * ts],
                [[h[0][0], h[0][1] * ts], [h[1][0] * ts, h[1][1] * ts * ts]],
            ))
        };
        let s0 = tau / ts;
        let (g, h) = normalized(theta, s0)?;

        let step = 1e-6;
        let f = |t: f64, s: f64| score(t, s * ts, k, &ctx);
        let fd_g = [
            (f(theta + step, s0)? - f(theta - step, s0)?) / (2.0 * step),
            (f(theta, s0 + step)? - f(theta, s0 - step)?) / (2.0 * step),
        ];
        let step = 1e-5;
        let (gtp, _) = normalized(theta + step, s0)?;
        let (gtm, _) = normalized(theta - step, s0)?;
        let (gsp, _) = normalized(theta, s0 + step)?;
        let (gsm, _) = normalized(theta, s0 - step)?;
        let fd_h = [
            [(gtp[0] - gtm[0]) / (2.0 * step), (gsp[0] - gsm[0]) / (2.0 * step)],
            [(gtp[1] - gtm[1]) / (2.0 * step), (gsp[1] - gsm[1]) / (2.0 * step)],
        ];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff_g = [g[0] - fd_g[0], g[1] - fd_g[1]];
        eg.push(norm(&diff_g) / norm(&fd_g));
        let flat = |m: [[f64; 2]; 2]| [m[0][0], m[0][1], m[1][0], m[1][1]];
        let (a, b) = (flat(h), flat(fd_h));
        let diff_h: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        eh.push(norm(&diff_h) / norm(&b));
    }
    Ok([
        Check::from_errors("score_gradient", &eg, 1e-5),
        Check::from_errors("score_hessian", &eh, 1e-3),
    ])
}

/// Fast forward map and atoms against dense materialization on tiny dims.
pub fn check_dense_equivalence(instances: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ef = Vec::with_capacity(instances);
    let mut ea = Vec::with_capacity(instances);
    for i in 0..instances {
        let model = small_model(4, 2, 1, 2, 5, 1.0, derive_seed(seed, &[i as u64]))?;
        let dense = dense_operator(&model);
        let h: Vec<Complex64> = (0..model.channel_len()).map(|_| cn(&mut rng)).collect();
        let fast = apply_forward(&h, &model, None)?;
        let slow = &dense * DVector::from_vec(h);
        ef.push(fast.iter().zip(slow.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
        let (theta, tau, k) = random_location(&mut rng, &model, 0.0);
        let a = atom(theta, tau, k, &model)?;
        let b = dense_atom(theta, tau, k, &model)?;
        ea.push(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
    }
    Ok([
        Check::from_errors("forward_vs_dense", &ef, 1e-10),
        Check::from_errors("atom_vs_dense", &ea, 1e-10),
    ])
}

/// Quadratic-form atom energy against the squared norm of the materialized
/// atom on the same slots.
pub fn check_atom_energy(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for i in 0..instances {
        let model = small_model(8, 2, 2, 4, 24, 3.0, derive_seed(seed, &[i as u64]))?;
        let split = split_data(model.rows(), model.rf_chains(), 0.8, rng.random())?;
        let energy = AtomEnergy::new(&model, &split.est_slots);
        let (theta, tau, k) = random_location(&mut rng, &model, 0.0);
        let a = atom(theta, tau, k, &model)?;
        let direct: f64 = split.est_rows.iter().map(|&r| a[r].norm_sqr()).sum();
        errors.push(rel(energy.energy(&model, theta, tau, k), direct, 0.0));
    }
    Ok(Check::from_errors("atom_energy", &errors, 1e-10))
}

/// At 12 bits the likelihood refit must reproduce least squares on the
/// estimation rows.
pub fn check_refit_least_squares(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for i in 0..instances {
        let model = small_model(8, 4, 2, 3, 40, 4.0, derive_seed(seed, &[i as u64]))?;
        let p = rng.random_range(1..5);
        let cols: Vec<Vec<Complex64>> = (0..p)
            .map(|_| {
                let (theta, tau, k) = random_location(&mut rng, &model, 0.0);
                atom(theta, tau, k, &model)
            })
            .collect::<Result<_>>()?;
        let atoms = DMatrix::from_fn(model.rows(), p, |r, j| cols[j][r]);
        let x = DVector::from_fn(p, |_, _| cn(&mut rng));
        let clean = &atoms * &x;
        let y: Vec<Complex64> = clean.iter().map(|v| v + cn(&mut rng)).collect();
        let spec = design_quantizer(MAX_BITS, crate::harness::real_part_std(&y))?;
        let obs = quantize(&y, &spec)?;
        let split = split_data(model.rows(), model.rf_chains(), 0.8, rng.random())?;
        let rows = &split.est_rows;
        let warm = vec![Complex64::new(0.0, 0.0); p];
        let fit = maximize_gain_likelihood(&atoms, &obs, rows, &warm, 1e-7, 100)?;
        let deq = obs.dequantize();
        let a = DMatrix::from_fn(rows.len(), p, |r, j| atoms[(rows[r], j)]);
        let b = DVector::from_fn(rows.len(), |r, _| deq[rows[r]]);
        let ls = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| crate::error::Error::Input(e.to_string()))?;
        errors.push(relative_error(&fit.gains, ls.as_slice()));
    }
    Ok(Check::from_errors("refit_vs_least_squares", &errors, 1e-3))
}

/// Every sample must fall inside the box its code names.
pub fn check_quantizer_boxes(instances: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let spec = design_quantizer(rng.random_range(1..=MAX_BITS), rng.random_range(0.1..3.0))?;
        let y: Vec<Complex64> = (0..32).map(|_| cn(&mut rng) * 3.0).collect();
        let obs = quantize(&y, &spec)?;
        let outside = y
            .iter()
            .enumerate()
            .filter(|(i, v)| {
                let (lo, up) = (obs.lo[*i], obs.up[*i]);
                !(lo.re <= v.re && v.re < up.re && lo.im <= v.im && v.im < up.im)
            })
            .count();
        errors.push(outside as f64);
    }
    Ok(Check::from_errors("quantizer_boxes", &errors, 0.5))
}

/// Runs every family with `instances` random cases each.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    out.extend(check_box_derivatives(instances * 10, derive_seed(seed, &[1]))?);
    out.push(check_gain_gradient(instances, derive_seed(seed, &[2]))?);
    out.push(check_atom_jacobian(instances, derive_seed(seed, &[3]))?);
    out.extend(check_score_derivatives(instances, derive_seed(seed, &[4]))?);
    out.push(check_atom_energy(instances.min(100), derive_seed(seed, &[8]))?);
    out.extend(check_dense_equivalence(instances.min(100), derive_seed(seed, &[5]))?);
    out.push(check_refit_least_squares(instances.min(100), derive_seed(seed, &[6]))?);
    out.push(check_quantizer_boxes(instances, derive_seed(seed, &[7]))?);
    Ok(out)
}
