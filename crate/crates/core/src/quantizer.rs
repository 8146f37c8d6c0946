//! Uniform B-bit ADC model and the quantized Gaussian likelihood.
//!
//! Each real dimension of a received sample is reported only as the interval
//! ("box") of a uniform mid-rise quantizer that contains it. With additive
//! Gaussian noise of standard deviation `sigma` per real dimension, the
//! probability of an observed box given a mean `mu` is
//! `Phi((up - mu) / sigma) - Phi((lo - mu) / sigma)`, and every likelihood the
//! estimator touches is a sum of logarithms of such terms.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::OnceLock;

use errorfunctions::RealErrorFunctions;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};

/// Per-real-dimension noise standard deviation of whitened `CN(0, 1)` noise.
pub const NOISE_SIGMA: f64 = FRAC_1_SQRT_2;

pub const MAX_BITS: u32 = 12;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub bits: u32,
    /// Step between adjacent thresholds, per real dimension.
    pub step: f64,
    /// Standard deviation the step was scaled from.
    pub per_dim_sigma: f64,
}

impl QuantizerSpec {
    pub fn new(bits: u32, step: f64) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return config(format!("bits must lie in 1..={MAX_BITS}, got {bits}"));
        }
        if !(step.is_finite() && step > 0.0) {
            return config(format!("quantizer step must be positive, got {step}"));
        }
        Ok(Self {
            bits,
            step,
            per_dim_sigma: f64::NAN,
        })
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    /// Lower threshold of interval `index`; `-inf` for the bottom interval.
    pub fn lower(&self, index: u32) -> f64 {
        if index == 0 {
            f64::NEG_INFINITY
        } else {
            self.threshold(index)
        }
    }

    /// Upper threshold of interval `index`; `+inf` for the top interval.
    pub fn upper(&self, index: u32) -> f64 {
        if index + 1 >= self.levels() {
            f64::INFINITY
        } else {
            self.threshold(index + 1)
        }
    }

    /// Interior threshold `i` in `1..levels`.
    fn threshold(&self, i: u32) -> f64 {
        self.step * (i as f64 - (self.levels() / 2) as f64)
    }

    /// Reconstruction point of a bounded interval (its midpoint); outer
    /// intervals reconstruct half a step beyond their finite edge.
    pub fn reconstruction(&self, index: u32) -> f64 {
        self.step * (index as f64 - (self.levels() / 2) as f64 + 0.5)
    }

    /// Interval index of a finite value. Values on a threshold go up.
    pub fn index_of(&self, v: f64) -> u32 {
        let top = self.levels() - 1;
        let guess = (v / self.step).floor() + (self.levels() / 2) as f64;
        let mut i = guess.clamp(0.0, top as f64) as u32;
        // Float division can land one cell off; settle against the thresholds
        // actually used for lo/up.
        while i < top && v >= self.threshold(i + 1) {
            i += 1;
        }
        while i > 0 && v < self.threshold(i) {
            i -= 1;
        }
        i
    }
}

/// Step that minimizes `E(x - Q(x))^2` for `x ~ N(0, 1)`, found by
/// golden-section search on the closed-form distortion. Cached per bit depth.
pub fn unit_gaussian_step(bits: u32) -> Result<f64> {
    static CACHE: [OnceLock<f64>; MAX_BITS as usize + 1] =
        [const { OnceLock::new() }; MAX_BITS as usize + 1];
    if !(1..=MAX_BITS).contains(&bits) {
        return config(format!("bits must lie in 1..={MAX_BITS}, got {bits}"));
    }
    Ok(*CACHE[bits as usize].get_or_init(|| {
        let (lo, hi) = ((1e-4f64).ln(), 8f64.ln());
        golden_section_min(|s| gaussian_distortion(bits, s.exp()), lo, hi, 1e-12).exp()
    }))
}

pub fn design_quantizer(bits: u32, per_dim_sigma: f64) -> Result<QuantizerSpec> {
    if !(per_dim_sigma.is_finite() && per_dim_sigma > 0.0) {
        return config(format!(
            "per-dimension sigma must be positive, got {per_dim_sigma}"
        ));
    }
    let c = unit_gaussian_step(bits)?;
    Ok(QuantizerSpec {
        bits,
        step: c * per_dim_sigma,
        per_dim_sigma,
    })
}

/// Mean squared quantization error of a unit Gaussian under a mid-rise
/// uniform quantizer with the given step.
fn gaussian_distortion(bits: u32, step: f64) -> f64 {
    let spec = QuantizerSpec {
        bits,
        step,
        per_dim_sigma: 1.0,
    };
    let pdf = |x: f64| {
        if x.is_finite() {
            INV_SQRT_2PI * (-0.5 * x * x).exp()
        } else {
            0.0
        }
    };
    let x_pdf = |x: f64| if x.is_finite() { x * pdf(x) } else { 0.0 };
    let cdf = |x: f64| 0.5 * <f64 as RealErrorFunctions>::erfc(-x * FRAC_1_SQRT_2);
    (0..spec.levels())
        .map(|i| {
            let (a, b) = (spec.lower(i), spec.upper(i));
            let q = spec.reconstruction(i);
            let mass = cdf(b) - cdf(a);
            (1.0 + q * q) * mass - (x_pdf(b) - x_pdf(a)) - 2.0 * q * (pdf(a) - pdf(b))
        })
        .sum()
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub re: u16,
    pub im: u16,
}

/// Quantized view of a received block: interval codes plus the thresholds
/// that bound each real and imaginary part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantizedObservation {
    pub codes: Vec<Code>,
    pub lo: Vec<Complex64>,
    pub up: Vec<Complex64>,
    pub quantizer: QuantizerSpec,
}

impl QuantizedObservation {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Box log-probabilities and their mean-derivatives for row `i` given the
    /// complex noise-free mean of that row.
    #[inline]
    pub(crate) fn row_terms(&self, i: usize, mean: Complex64) -> (BoxDerivatives, BoxDerivatives) {
        let (lo, up) = (self.lo[i], self.up[i]);
        (
            box_terms(lo.re, up.re, mean.re, NOISE_SIGMA),
            box_terms(lo.im, up.im, mean.im, NOISE_SIGMA),
        )
    }

    /// Midpoints of the bounded boxes (outer boxes use the reconstruction
    /// point); a dequantized estimate of the received block.
    pub fn dequantize(&self) -> Vec<Complex64> {
        self.codes
            .iter()
            .map(|c| {
                Complex64::new(
                    self.quantizer.reconstruction(c.re as u32),
                    self.quantizer.reconstruction(c.im as u32),
                )
            })
            .collect()
    }
}

pub fn quantize(y: &[Complex64], spec: &QuantizerSpec) -> Result<QuantizedObservation> {
    if y.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return input("cannot quantize non-finite samples");
    }
    let n = y.len();
    let mut codes = Vec::with_capacity(n);
    let mut lo = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    for v in y {
        let (cr, ci) = (spec.index_of(v.re), spec.index_of(v.im));
        codes.push(Code {
            re: cr as u16,
            im: ci as u16,
        });
        lo.push(Complex64::new(spec.lower(cr), spec.lower(ci)));
        up.push(Complex64::new(spec.upper(cr), spec.upper(ci)));
    }
    Ok(QuantizedObservation {
        codes,
        lo,
        up,
        quantizer: *spec,
    })
}

/// Log box probability and its first two derivatives in the mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxDerivatives {
    pub logp: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn box_loglik(lo: f64, up: f64, mu: f64, sigma: f64) -> Result<BoxDerivatives> {
    if lo.is_nan() || up.is_nan() || !(lo < up) {
        return input(format!("box needs lo < up, got [{lo}, {up}]"));
    }
    if !mu.is_finite() || !(sigma.is_finite() && sigma > 0.0) {
        return input(format!("invalid mean {mu} or sigma {sigma}"));
    }
    Ok(box_terms(lo, up, mu, sigma))
}

/// Unchecked [`box_loglik`].
#[inline]
pub(crate) fn box_terms(lo: f64, up: f64, mu: f64, sigma: f64) -> BoxDerivatives {
    let (logp, g1, g2) = standard_box((lo - mu) / sigma, (up - mu) / sigma);
    BoxDerivatives {
        logp,
        d1: g1 / sigma,
        d2: g2 / (sigma * sigma),
    }
}

/// `log(Phi(u) - Phi(l))` with derivatives taken with respect to a shift of
/// the mean, in standardized units.
fn standard_box(l: f64, u: f64) -> (f64, f64, f64) {
    if l == f64::NEG_INFINITY && u == f64::INFINITY {
        return (0.0, 0.0, 0.0);
    }
    if (u - l) * (1.0 + l.abs().min(u.abs())) <= 1.0 {
        return narrow_box(l, u);
    }
    if l >= 0.0 {
        // Mirror the right tail onto the left one.
        let (logp, g1, g2) = standard_box(-u, -l);
        return (logp, -g1, g2);
    }
    let (logp, a_l, a_u);
    if u > 0.0 {
        // Box straddles the mean: both erf terms are positive, no cancellation.
        let erf = <f64 as RealErrorFunctions>::erf;
        let p = 0.5 * (erf(u * FRAC_1_SQRT_2) + erf(-l * FRAC_1_SQRT_2));
        logp = p.ln();
        a_l = pdf(l) / p;
        a_u = pdf(u) / p;
    } else {
        // Entire box in the left tail: factor out Phi(u) via erfcx.
        let ex_u = (-u * FRAC_1_SQRT_2).erfcx();
        let log_phi_u = (0.5 * ex_u).ln() - 0.5 * u * u;
        let mills_u = SQRT_2_OVER_PI / ex_u;
        if l == f64::NEG_INFINITY {
            logp = log_phi_u;
            a_l = 0.0;
            a_u = mills_u;
        } else {
            let ex_l = (-l * FRAC_1_SQRT_2).erfcx();
            let log_ratio = ex_l.ln() - ex_u.ln() - 0.5 * (l - u) * (l + u);
            let ratio = log_ratio.exp();
            let gap = -log_ratio.exp_m1();
            logp = log_phi_u + gap.ln();
            a_u = mills_u / gap;
            a_l = SQRT_2_OVER_PI / ex_l * ratio / gap;
        }
    }
    let g1 = a_l - a_u;
    let edge = |x: f64, a: f64| if a == 0.0 { 0.0 } else { x * a };
    // The truncated-normal variance bounds the curvature to [-1, 0].
    let g2 = (edge(l, a_l) - edge(u, a_u) - g1 * g1).clamp(-1.0, 0.0);
    (logp.min(0.0), g1, g2)
}

const GAUSS_LEGENDRE_8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Narrow boxes, where the erf and erfcx differences above cancel. The
/// derivatives are the mean and variance of the truncated normal, taken by
/// Gauss-Legendre quadrature of `phi` scaled by its value at the point of
/// the box nearest the origin.
fn narrow_box(l: f64, u: f64) -> (f64, f64, f64) {
    let x0 = 0f64.clamp(l, u);
    let (mid, half) = (0.5 * (l + u), 0.5 * (u - l));
    let mut nodes = [(0.0, 0.0); 8];
    for (i, &(t, w)) in GAUSS_LEGENDRE_8.iter().enumerate() {
        for (j, x) in [mid - half * t, mid + half * t].into_iter().enumerate() {
            nodes[2 * i + j] = (x, w * (-0.5 * (x - x0) * (x + x0)).exp());
        }
    }
    let mass: f64 = nodes.iter().map(|n| n.1).sum();
    let mean = nodes.iter().map(|&(x, w)| w * x).sum::<f64>() / mass;
    let var = nodes.iter().map(|&(x, w)| w * (x - mean).powi(2)).sum::<f64>() / mass;
    let logp = (INV_SQRT_2PI * half * mass).ln() - 0.5 * x0 * x0;
    (logp.min(0.0), mean, (var - 1.0).clamp(-1.0, 0.0))
}

#[inline]
fn pdf(x: f64) -> f64 {
    if x.is_finite() {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    } else {
        0.0
    }
}

fn check_dims(x: &[Complex64], atoms: &DMatrix<Complex64>, obs: &QuantizedObservation, rows: &[usize]) -> Result<()> {
    if atoms.nrows() != obs.len() {
        return input(format!(
            "atom operator has {} rows but the observation has {}",
            atoms.nrows(),
            obs.len()
        ));
    }
    if atoms.ncols() != x.len() {
        return input(format!(
            "{} gains supplied for {} atoms",
            x.len(),
            atoms.ncols()
        ));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= obs.len()) {
        return input(format!("row {r} out of range for {} rows", obs.len()));
    }
    Ok(())
}

#[inline]
pub(crate) fn row_mean(atoms: &DMatrix<Complex64>, x: &[Complex64], i: usize) -> Complex64 {
    x.iter()
        .enumerate()
        .map(|(j, xj)| atoms[(i, j)] * xj)
        .sum()
}

/// Quantized log-likelihood `sum log P(box | mean)` over `rows`, with the mean
/// `atoms * x` and whitened `CN(0, 1)` noise.
pub fn log_likelihood(
    x: &[Complex64],
    atoms: &DMatrix<Complex64>,
    obs: &QuantizedObservation,
    rows: &[usize],
) -> Result<f64> {
    check_dims(x, atoms, obs, rows)?;
    Ok(rows
        .iter()
        .map(|&i| {
            let (re, im) = obs.row_terms(i, row_mean(atoms, x, i));
            re.logp + im.logp
        })
        .sum())
}

/// Ascent direction of [`log_likelihood`] in the gains: entry `j` packs
/// `dg/dRe(x_j) + i dg/dIm(x_j)`, which equals `atoms^H e` with `e` the
/// per-row first derivatives.
pub fn gain_gradient(
    x: &[Complex64],
    atoms: &DMatrix<Complex64>,
    obs: &QuantizedObservation,
    rows: &[usize],
) -> Result<Vec<Complex64>> {
    check_dims(x, atoms, obs, rows)?;
    let mut grad = vec![Complex64::new(0.0, 0.0); x.len()];
    for &i in rows {
        let (re, im) = obs.row_terms(i, row_mean(atoms, x, i));
        let e = Complex64::new(re.d1, im.d1);
        for (j, g) in grad.iter_mut().enumerate() {
            *g += atoms[(i, j)].conj() * e;
        }
    }
    Ok(grad)
}

/// Per-row likelihood slopes `d1(re) + i d1(im)` at the given means, for the
/// listed rows only.
pub fn residual_weights(
    obs: &QuantizedObservation,
    means: &[Complex64],
    rows: &[usize],
) -> Vec<Complex64> {
    rows.iter()
        .map(|&i| {
            let (re, im) = obs.row_terms(i, means[i]);
            Complex64::new(re.d1, im.d1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn design_scales_linearly_in_sigma() {
        let a = design_quantizer(1, 1.0).unwrap();
        let b = design_quantizer(1, 2.0).unwrap();
        assert_relative_eq!(b.step, 2.0 * a.step, max_relative = 1e-14);
    }

    #[test]
    fn design_rejects_bad_bits() {
        assert!(design_quantizer(0, 1.0).is_err());
        assert!(design_quantizer(13, 1.0).is_err());
        assert!(design_quantizer(2, 0.0).is_err());
    }

    #[test]
    fn one_bit_is_a_sign_detector() {
        let spec = QuantizerSpec::new(1, 1.0).unwrap();
        let obs = quantize(&[Complex64::new(0.3, -0.2)], &spec).unwrap();
        assert_eq!(obs.lo[0].re, 0.0);
        assert_eq!(obs.up[0].re, f64::INFINITY);
        assert_eq!(obs.lo[0].im, f64::NEG_INFINITY);
        assert_eq!(obs.up[0].im, 0.0);
    }

    #[test]
    fn ties_go_to_the_upper_interval() {
        let spec = QuantizerSpec::new(2, 1.0).unwrap();
        let obs = quantize(&[Complex64::new(1.7, 0.0)], &spec).unwrap();
        assert_eq!((obs.lo[0].re, obs.up[0].re), (1.0, f64::INFINITY));
        assert_eq!((obs.lo[0].im, obs.up[0].im), (0.0, 1.0));
        let obs = quantize(&[Complex64::new(-1.0, 1.0)], &spec).unwrap();
        assert_eq!((obs.lo[0].re, obs.up[0].re), (-1.0, 0.0));
        assert_eq!((obs.lo[0].im, obs.up[0].im), (1.0, f64::INFINITY));
    }

    #[test]
    fn quantize_rejects_nan() {
        let spec = QuantizerSpec::new(2, 1.0).unwrap();
        assert!(quantize(&[Complex64::new(f64::NAN, 0.0)], &spec).is_err());
    }

    #[test]
    fn full_line_box_is_certain() {
        let b = box_loglik(f64::NEG_INFINITY, f64::INFINITY, 3.0, 0.5).unwrap();
        assert_eq!(b, BoxDerivatives::default());
    }

    #[test]
    fn half_line_at_its_median() {
        let sigma = 0.7;
        let b = box_loglik(f64::NEG_INFINITY, 1.5, 1.5, sigma).unwrap();
        assert_relative_eq!(b.logp, 0.5f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(b.d1, -2.0 / (2.0 * PI).sqrt() / sigma, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_box_has_zero_slope() {
        let b = box_loglik(-0.8, 0.8, 0.0, 1.3).unwrap();
        assert!(b.d1.abs() < 1e-15);
        assert!(b.d2 < 0.0);
    }

    #[test]
    fn empty_box_rejected() {
        assert!(box_loglik(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(box_loglik(2.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn deep_tails_stay_finite() {
        for &mu in &[-40.0, -12.0, 12.0, 40.0, 1e3] {
            for &(lo, up) in &[(0.0, 0.01), (0.0, f64::INFINITY), (-1.0, 2.0)] {
                let b = box_loglik(lo, up, mu, 1.0).unwrap();
                assert!(b.logp.is_finite() && b.logp <= 0.0, "{mu} {lo} {up} {b:?}");
                assert!(b.d1.is_finite() && b.d2.is_finite());
            }
        }
        // Half line far in the tail behaves like the Gaussian quadratic.
        let b = box_loglik(f64::NEG_INFINITY, 0.0, 30.0, 1.0).unwrap();
        assert_relative_eq!(b.d1, -30.0, max_relative = 2e-3);
    }

    #[test]
    fn empty_support_one_bit_at_zero() {
        let spec = QuantizerSpec::new(1, 1.0).unwrap();
        let y: Vec<_> = (0..6).map(|i| Complex64::new(i as f64 - 2.5, 1.0 - i as f64)).collect();
        let obs = quantize(&y, &spec).unwrap();
        let atoms = DMatrix::<Complex64>::zeros(6, 0);
        let rows = [0, 2, 3, 5];
        let g = log_likelihood(&[], &atoms, &obs, &rows).unwrap();
        assert_relative_eq!(g, 2.0 * 4.0 * 0.5f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn zero_atoms_give_zero_gradient() {
        let spec = QuantizerSpec::new(2, 0.5).unwrap();
        let y: Vec<_> = (0..5).map(|i| Complex64::new(0.3 * i as f64, -0.1)).collect();
        let obs = quantize(&y, &spec).unwrap();
        let atoms = DMatrix::<Complex64>::zeros(5, 2);
        let x = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.1)];
        let g = gain_gradient(&x, &atoms, &obs, &[0, 1, 2, 3, 4]).unwrap();
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let spec = QuantizerSpec::new(2, 0.5).unwrap();
        let obs = quantize(&[Complex64::new(0.0, 0.0); 4], &spec).unwrap();
        let atoms = DMatrix::<Complex64>::zeros(3, 1);
        assert!(log_likelihood(&[Complex64::new(0.0, 0.0)], &atoms, &obs, &[0]).is_err());
        let atoms = DMatrix::<Complex64>::zeros(4, 1);
        assert!(log_likelihood(&[], &atoms, &obs, &[0]).is_err());
        assert!(gain_gradient(&[Complex64::new(0.0, 0.0)], &atoms, &obs, &[4]).is_err());
    }
}
