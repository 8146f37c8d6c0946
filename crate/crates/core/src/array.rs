//! Physical layer: ULA response, raised-cosine pulse and the random sparse
//! multipath channel.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};

/// Half-wavelength uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub antennas: usize,
}

impl ArraySpec {
    pub fn new(antennas: usize) -> Result<Self> {
        if antennas == 0 {
            return config("array needs at least one antenna");
        }
        Ok(Self { antennas })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Raised-cosine roll-off factor in `[0, 1]`.
    pub rolloff: f64,
    /// Sampling period in seconds.
    pub sample_period: f64,
    /// Number of channel taps `D`.
    pub taps: usize,
}

impl PulseSpec {
    pub const DEFAULT_ROLLOFF: f64 = 0.35;

    pub fn new(rolloff: f64, sample_period: f64, taps: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&rolloff) {
            return config(format!("roll-off must lie in [0, 1], got {rolloff}"));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return config(format!("sample period must be positive, got {sample_period}"));
        }
        if taps == 0 {
            return config("at least one channel tap is required");
        }
        Ok(Self {
            rolloff,
            sample_period,
            taps,
        })
    }

    /// Largest admissible path delay, `(D - 1) T_s`.
    pub fn max_delay(&self) -> f64 {
        (self.taps - 1) as f64 * self.sample_period
    }
}

/// One propagation path of user `user`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: Complex64,
    /// Angle of arrival in radians, `[-pi/2, pi/2]`.
    pub aoa: f64,
    /// Delay in seconds, `[0, (D - 1) T_s]`.
    pub delay: f64,
    pub user: usize,
}

/// A drawn channel: its paths and the stacked taps `h = vec([H[0] .. H[D-1]])`.
///
/// Entry `(m, k, d)` lives at `m + M (k + K d)`: antennas fastest, then
/// users, then taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub paths: Vec<PathParams>,
    pub h: Vec<Complex64>,
    pub antennas: usize,
    pub users: usize,
    pub taps: usize,
}

impl ChannelRealization {
    /// `h_k[d]`, the response of user `k` at tap `d`.
    pub fn column(&self, k: usize, d: usize) -> &[Complex64] {
        let start = channel_index(0, k, d, self.antennas, self.users);
        &self.h[start..start + self.antennas]
    }
}

#[inline]
pub fn channel_index(m: usize, k: usize, d: usize, antennas: usize, users: usize) -> usize {
    m + antennas * (k + users * d)
}

fn check_angle(theta: f64) -> Result<()> {
    if !(-FRAC_PI_2..=FRAC_PI_2).contains(&theta) {
        return input(format!("angle {theta} outside [-pi/2, pi/2]"));
    }
    Ok(())
}

/// Array response `a(theta)[m] = exp(j pi m sin(theta))`, phase referenced to
/// antenna 0.
pub fn steering(theta: f64, antennas: usize) -> Result<Vec<Complex64>> {
    check_angle(theta)?;
    Ok(steering_jet(theta, antennas).0)
}

/// [`steering`] and its element-wise derivative in `theta`.
pub fn steering_with_derivative(
    theta: f64,
    antennas: usize,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    check_angle(theta)?;
    let (a, da, _) = steering_jet(theta, antennas);
    Ok((a, da))
}

/// Response with first and second `theta` derivatives; no range check.
pub(crate) fn steering_jet(
    theta: f64,
    antennas: usize,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let (s, c) = theta.sin_cos();
    let mut a = Vec::with_capacity(antennas);
    let mut da = Vec::with_capacity(antennas);
    let mut dda = Vec::with_capacity(antennas);
    for m in 0..antennas {
        let k = PI * m as f64;
        let v = Complex64::from_polar(1.0, k * s);
        // d/dtheta of j k sin(theta) is j k cos(theta).
        let w = Complex64::new(0.0, k * c);
        a.push(v);
        da.push(w * v);
        dda.push((w * w + Complex64::new(0.0, -k * s)) * v);
    }
    (a, da, dda)
}

/// `sin(u)/u` with its first two derivatives.
fn sinc_jet(u: f64) -> [f64; 3] {
    if u.abs() < 1e-2 {
        let u2 = u * u;
        [
            1.0 - u2 / 6.0 + u2 * u2 / 120.0 - u2 * u2 * u2 / 5040.0,
            u * (-1.0 / 3.0 + u2 / 30.0 - u2 * u2 / 840.0),
            -1.0 / 3.0 + u2 / 10.0 - u2 * u2 / 168.0,
        ]
    } else {
        let (s, c) = u.sin_cos();
        [
            s / u,
            (u * c - s) / (u * u),
            ((2.0 - u * u) * s - 2.0 * u * c) / (u * u * u),
        ]
    }
}

/// `cos(pi y / 2) / (1 - y^2)` and derivatives. For `y >= 0` this equals
/// `(pi/2) sinc(pi (y - 1) / 2) / (1 + y)`, which has no singularity at
/// `y = 1`; negative `y` use evenness.
fn rolloff_window_jet(y: f64) -> [f64; 3] {
    let (ya, sign) = if y < 0.0 { (-y, -1.0) } else { (y, 1.0) };
    let h = FRAC_PI_2;
    let [s, ds, dds] = sinc_jet(h * (ya - 1.0));
    let w = 1.0 / (1.0 + ya);
    let g = h * s * w;
    let dg = h * (h * ds * w - s * w * w);
    let ddg = h * (h * h * dds * w - 2.0 * h * ds * w * w + 2.0 * s * w * w * w);
    [g, sign * dg, ddg]
}

/// Raised-cosine pulse value and first two time derivatives at `t` seconds.
pub(crate) fn rc_pulse_jet(t: f64, spec: &PulseSpec) -> [f64; 3] {
    let ts = spec.sample_period;
    let beta = spec.rolloff;
    let x = t / ts;
    let [s, ds, dds] = sinc_jet(PI * x);
    let [g, dg, ddg] = rolloff_window_jet(2.0 * beta * x);
    let p = s * g;
    let dp = PI * ds * g + 2.0 * beta * s * dg;
    let ddp = PI * PI * dds * g + 4.0 * PI * beta * ds * dg + 4.0 * beta * beta * s * ddg;
    [p, dp / ts, ddp / (ts * ts)]
}

/// Raised-cosine pulse
/// `p(t) = sinc(t/T) cos(pi beta t/T) / (1 - (2 beta t/T)^2)`,
/// continuous through its removable singularities.
pub fn rc_pulse(t: f64, spec: &PulseSpec) -> f64 {
    rc_pulse_jet(t, spec)[0]
}

pub fn rc_pulse_deriv(t: f64, spec: &PulseSpec) -> f64 {
    rc_pulse_jet(t, spec)[1]
}

pub fn rc_pulse_second_deriv(t: f64, spec: &PulseSpec) -> f64 {
    rc_pulse_jet(t, spec)[2]
}

/// Draws `L_k` paths per user with `CN(0, 1)` gains, uniform angles over
/// `[-pi/2, pi/2]` and uniform delays over `[0, (D - 1) T_s]`.
pub fn draw_paths(per_user: &[usize], pulse: &PulseSpec, seed: u64) -> Result<Vec<PathParams>> {
    if let Some(k) = per_user.iter().position(|&l| l == 0) {
        return config(format!("user {k} needs at least one path"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_delay = pulse.max_delay();
    let mut paths = Vec::with_capacity(per_user.iter().sum());
    for (user, &count) in per_user.iter().enumerate() {
        for _ in 0..count {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let aoa = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
            let delay = if max_delay > 0.0 {
                rng.random_range(0.0..=max_delay)
            } else {
                0.0
            };
            paths.push(PathParams {
                gain: Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2,
                aoa,
                delay,
                user,
            });
        }
    }
    Ok(paths)
}

/// Builds `h` from `h_k[d] = sum_l alpha p(d T_s - tau) a(theta)`.
pub fn assemble_channel(
    paths: &[PathParams],
    array: &ArraySpec,
    pulse: &PulseSpec,
    users: usize,
) -> Result<ChannelRealization> {
    let (m, d_taps) = (array.antennas, pulse.taps);
    let mut h = vec![Complex64::new(0.0, 0.0); m * users * d_taps];
    for p in paths {
        if p.user >= users {
            return input(format!("path user {} but only {users} users", p.user));
        }
        if !(0.0..=pulse.max_delay()).contains(&p.delay) {
            return input(format!("path delay {} outside the tap window", p.delay));
        }
        let a = steering(p.aoa, m)?;
        for d in 0..d_taps {
            let w = p.gain * rc_pulse(d as f64 * pulse.sample_period - p.delay, pulse);
            let base = channel_index(0, p.user, d, m, users);
            for (hm, am) in h[base..base + m].iter_mut().zip(&a) {
                *hm += w * am;
            }
        }
    }
    Ok(ChannelRealization {
        paths: paths.to_vec(),
        h,
        antennas: m,
        users,
        taps: d_taps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pulse() -> PulseSpec {
        PulseSpec::new(0.35, 1.0 / 600e6, 4).unwrap()
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering(0.0, 7).unwrap();
        assert!(a.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn endfire_alternates() {
        let a = steering(FRAC_PI_2, 2).unwrap();
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_has_norm_sqrt_m() {
        for &theta in &[-1.2, -0.3, 0.4, 1.5] {
            let a = steering(theta, 13).unwrap();
            let n2: f64 = a.iter().map(|v| v.norm_sqr()).sum();
            assert_relative_eq!(n2, 13.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn steering_rejects_out_of_range() {
        assert!(steering(1.6, 4).is_err());
        assert!(steering_with_derivative(-1.6, 4).is_err());
    }

    #[test]
    fn pulse_is_nyquist() {
        let p = pulse();
        assert_relative_eq!(rc_pulse(0.0, &p), 1.0, max_relative = 1e-15);
        for m in [-3i32, -2, -1, 1, 2, 3, 7] {
            assert!(rc_pulse(m as f64 * p.sample_period, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn pulse_is_continuous_at_the_window_singularity() {
        let p = pulse();
        let t0 = p.sample_period / (2.0 * p.rolloff);
        let eps = 1e-9 * p.sample_period;
        let limit = 0.5 * (rc_pulse(t0 - eps, &p) + rc_pulse(t0 + eps, &p));
        assert!((rc_pulse(t0, &p) - limit).abs() < 1e-6);
        // Known closed-form value: (pi/4) sinc(1/(2 beta)).
        let u = PI / (2.0 * p.rolloff);
        assert_relative_eq!(rc_pulse(t0, &p), FRAC_PI_2 / 2.0 * u.sin() / u, max_relative = 1e-12);
    }

    #[test]
    fn zero_rolloff_is_sinc() {
        let p = PulseSpec::new(0.0, 1.0, 2).unwrap();
        let t: f64 = 0.37;
        assert_relative_eq!(rc_pulse(t, &p), (PI * t).sin() / (PI * t), max_relative = 1e-14);
    }

    #[test]
    fn draws_are_deterministic_and_in_range() {
        let p = pulse();
        let a = draw_paths(&[3, 2], &p, 11).unwrap();
        let b = draw_paths(&[3, 2], &p, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for path in &a {
            assert!((-FRAC_PI_2..=FRAC_PI_2).contains(&path.aoa));
            assert!((0.0..=p.max_delay()).contains(&path.delay));
        }
        assert_eq!(a.iter().filter(|p| p.user == 1).count(), 2);
        assert!(draw_paths(&[1, 0], &p, 1).is_err());
    }

    #[test]
    fn single_broadside_path_at_zero_delay() {
        let p = pulse();
        let path = PathParams {
            gain: Complex64::new(1.0, 0.0),
            aoa: 0.0,
            delay: 0.0,
            user: 1,
        };
        let ch = assemble_channel(&[path], &ArraySpec::new(5).unwrap(), &p, 2).unwrap();
        assert!(ch.column(1, 0).iter().all(|v| (v - 1.0).norm() < 1e-15));
        for d in 1..4 {
            assert!(ch.column(1, d).iter().all(|v| v.norm() < 1e-12));
        }
        assert!(ch.column(0, 0).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn assemble_rejects_bad_user() {
        let p = pulse();
        let path = PathParams {
            gain: Complex64::new(1.0, 0.0),
            aoa: 0.0,
            delay: 0.0,
            user: 2,
        };
        assert!(assemble_channel(&[path], &ArraySpec::new(5).unwrap(), &p, 2).is_err());
    }
}
