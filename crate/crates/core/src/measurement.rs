//! Training pilots, the RF combiner schedule and the linear measurement map
//! from stacked channel taps to the received block.
//!
//! Rows of the received block are ordered slot-major: row `n R + r` is RF
//! chain `r` at slot `n`. Pilot streams are periodic over the `N` slots, so a
//! tap reaching back before slot 0 wraps around (circular convolution).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{channel_index, rc_pulse_jet, steering_jet, ArraySpec, PulseSpec};
use crate::error::{config, input, Result};

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zadoff-Chu sequence of the given length and root.
///
/// Odd lengths use `exp(-j pi u n (n + 1) / L)`, even lengths the
/// `exp(-j pi u n^2 / L)` form; both are `L`-periodic with ideal periodic
/// autocorrelation.
pub fn zc_sequence(length: usize, root: usize) -> Result<Vec<Complex64>> {
    if length == 0 {
        return config("Zadoff-Chu length must be positive");
    }
    if root == 0 || gcd(root, length) != 1 {
        return config(format!("root {root} is not coprime to length {length}"));
    }
    let l = length as u128;
    let u = root as u128;
    Ok((0..l)
        .map(|n| {
            let q = if length % 2 == 1 { n * (n + 1) } else { n * n };
            // Reduce the phase exactly before going to floating point.
            let r = (u * q) % (2 * l);
            Complex64::from_polar(1.0, -std::f64::consts::PI * r as f64 / l as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub users: usize,
    pub slots: usize,
    /// Linear pilot power per user and slot.
    pub snr: f64,
    pub zc_root: usize,
    /// Circular shift of the base sequence assigned to each user.
    pub shifts: Vec<usize>,
}

impl TrainingConfig {
    /// Shifts `k * floor(N / K)`, the widest equal spacing available.
    pub fn evenly_spaced(users: usize, slots: usize, snr: f64) -> Self {
        let spacing = slots.checked_div(users).unwrap_or(0);
        Self {
            users,
            slots,
            snr,
            zc_root: 1,
            shifts: (0..users).map(|k| k * spacing).collect(),
        }
    }
}

/// All pilot symbols `s_k[n]`, stored as the base sequence plus per-user shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotTable {
    pub base: Vec<Complex64>,
    pub shifts: Vec<usize>,
    pub amplitude: f64,
}

impl PilotTable {
    pub fn users(&self) -> usize {
        self.shifts.len()
    }

    pub fn slots(&self) -> usize {
        self.base.len()
    }

    /// `s_k[n]` for any integer slot, periodic in `N`.
    #[inline]
    pub fn symbol(&self, k: usize, n: i64) -> Complex64 {
        let period = self.base.len() as i64;
        let idx = (n + self.shifts[k] as i64).rem_euclid(period) as usize;
        self.base[idx] * self.amplitude
    }

    /// The full stream of user `k` over one period.
    pub fn stream(&self, k: usize) -> Vec<Complex64> {
        (0..self.slots() as i64).map(|n| self.symbol(k, n)).collect()
    }
}

/// Builds `sqrt(rho)`-scaled circular shifts of one length-`N` ZC sequence.
/// Shifts must be pairwise at least `taps` apart (circularly) so that delayed
/// copies of different users stay orthogonal.
pub fn build_pilots(cfg: &TrainingConfig, taps: usize) -> Result<PilotTable> {
    if cfg.users == 0 || cfg.slots == 0 {
        return config("pilots need at least one user and one slot");
    }
    if !(cfg.snr.is_finite() && cfg.snr > 0.0) {
        return config(format!("pilot power must be positive, got {}", cfg.snr));
    }
    if cfg.shifts.len() != cfg.users {
        return config(format!(
            "{} shifts given for {} users",
            cfg.shifts.len(),
            cfg.users
        ));
    }
    if cfg.users * taps > cfg.slots {
        return config(format!(
            "{} users with {taps} taps need more than the {} available slots",
            cfg.users, cfg.slots
        ));
    }
    let n = cfg.slots;
    for (i, &a) in cfg.shifts.iter().enumerate() {
        if a >= n {
            return config(format!("shift {a} exceeds the pilot period {n}"));
        }
        for &b in &cfg.shifts[i + 1..] {
            let diff = (a + n - b) % n;
            if diff.min(n - diff) < taps {
                return config(format!("shifts {a} and {b} closer than {taps} taps"));
            }
        }
    }
    Ok(PilotTable {
        base: zc_sequence(n, cfg.zc_root)?,
        shifts: cfg.shifts.clone(),
        amplitude: cfg.snr.sqrt(),
    })
}

/// Per-slot phase-shifter combiners `W[n]` (M x R, orthonormal columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerSchedule {
    pub antennas: usize,
    pub rf_chains: usize,
    /// Circular shift of column 0 at each slot.
    pub offsets: Vec<usize>,
    /// Shift increment between adjacent columns.
    pub stride: usize,
    #[serde(skip)]
    matrices: Vec<DMatrix<Complex64>>,
}

impl CombinerSchedule {
    pub fn slots(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, n: usize) -> &DMatrix<Complex64> {
        &self.matrices[n]
    }
}

/// Columns of `W[n]` are distinct circular shifts of a length-`M` ZC
/// sequence scaled by `1/sqrt(M)`. Column `r` at slot `n` uses shift
/// `offset_n + r floor(M / R)`, with `offset_n` drawn uniformly per slot.
pub fn build_combiners(
    antennas: usize,
    rf_chains: usize,
    slots: usize,
    seed: u64,
) -> Result<CombinerSchedule> {
    if rf_chains == 0 || rf_chains > antennas {
        return config(format!(
            "need 1 <= R <= M, got R = {rf_chains}, M = {antennas}"
        ));
    }
    let base = zc_sequence(antennas, 1)?;
    let scale = 1.0 / (antennas as f64).sqrt();
    let stride = antennas / rf_chains;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<usize> = (0..slots).map(|_| rng.random_range(0..antennas)).collect();
    let matrices = offsets
        .iter()
        .map(|&off| {
            DMatrix::from_fn(antennas, rf_chains, |m, r| {
                base[(m + off + r * stride) % antennas] * scale
            })
        })
        .collect();
    Ok(CombinerSchedule {
        antennas,
        rf_chains,
        offsets,
        stride,
        matrices,
    })
}

/// The full training-phase measurement setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementModel {
    pub array: ArraySpec,
    pub pulse: PulseSpec,
    pub pilots: PilotTable,
    pub combiners: CombinerSchedule,
}

impl MeasurementModel {
    pub fn new(
        array: ArraySpec,
        pulse: PulseSpec,
        pilots: PilotTable,
        combiners: CombinerSchedule,
    ) -> Result<Self> {
        if combiners.antennas != array.antennas {
            return config("combiner and array antenna counts differ");
        }
        if combiners.slots() != pilots.slots() {
            return config(format!(
                "{} combiner slots but {} pilot slots",
                combiners.slots(),
                pilots.slots()
            ));
        }
        Ok(Self {
            array,
            pulse,
            pilots,
            combiners,
        })
    }

    pub fn antennas(&self) -> usize {
        self.array.antennas
    }

    pub fn users(&self) -> usize {
        self.pilots.users()
    }

    pub fn taps(&self) -> usize {
        self.pulse.taps
    }

    pub fn slots(&self) -> usize {
        self.pilots.slots()
    }

    pub fn rf_chains(&self) -> usize {
        self.combiners.rf_chains
    }

    /// Length `RN` of the received block.
    pub fn rows(&self) -> usize {
        self.rf_chains() * self.slots()
    }

    /// Length `MKD` of the stacked channel.
    pub fn channel_len(&self) -> usize {
        self.antennas() * self.users() * self.taps()
    }

    fn check_params(&self, theta: f64, tau: f64, k: usize) -> Result<()> {
        if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&theta) {
            return input(format!("angle {theta} outside [-pi/2, pi/2]"));
        }
        if !(0.0..=self.pulse.max_delay()).contains(&tau) {
            return input(format!("delay {tau} outside [0, (D-1) T_s]"));
        }
        if k >= self.users() {
            return input(format!("user {k} out of range"));
        }
        Ok(())
    }

    /// `c_k(n, tau)` and its first two `tau` derivatives.
    #[inline]
    pub(crate) fn pilot_conv_jet(&self, k: usize, n: usize, tau: f64) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for d in 0..self.taps() {
            let [p, dp, ddp] = rc_pulse_jet(d as f64 * self.pulse.sample_period - tau, &self.pulse);
            let s = self.pilots.symbol(k, n as i64 - d as i64);
            out[0] += s * p;
            out[1] -= s * dp;
            out[2] += s * ddp;
        }
        out
    }

    /// Atom `a(theta, tau, k)` plus its first and second partials,
    /// ordered `[a, d_theta, d_tau, d_theta2, d_theta_tau, d_tau2]`.
    pub(crate) fn atom_jet(&self, theta: f64, tau: f64, k: usize, order: usize) -> Vec<Vec<Complex64>> {
        let (a, da, dda) = steering_jet(theta, self.antennas());
        let count = match order {
            0 => 1,
            1 => 3,
            _ => 6,
        };
        let mut out = vec![Vec::with_capacity(self.rows()); count];
        for n in 0..self.slots() {
            let w = self.combiners.matrix(n);
            let b = w.ad_mul(&nalgebra::DVector::from_column_slice(&a));
            let c = self.pilot_conv_jet(k, n, tau);
            if order == 0 {
                out[0].extend(b.iter().map(|v| v * c[0]));
                continue;
            }
            let db = w.ad_mul(&nalgebra::DVector::from_column_slice(&da));
            for r in 0..self.rf_chains() {
                out[0].push(b[r] * c[0]);
                out[1].push(db[r] * c[0]);
                out[2].push(b[r] * c[1]);
            }
            if order >= 2 {
                let ddb = w.ad_mul(&nalgebra::DVector::from_column_slice(&dda));
                for r in 0..self.rf_chains() {
                    out[3].push(ddb[r] * c[0]);
                    out[4].push(db[r] * c[1]);
                    out[5].push(b[r] * c[2]);
                }
            }
        }
        out
    }
}

/// `c_k(n, tau) = sum_d p(d T_s - tau) s_k[n - d]` and its `tau` derivative.
pub fn pilot_convolution(
    k: usize,
    n: usize,
    tau: f64,
    model: &MeasurementModel,
) -> Result<(Complex64, Complex64)> {
    if !(0.0..=model.pulse.max_delay()).contains(&tau) {
        return input(format!("delay {tau} outside [0, (D-1) T_s]"));
    }
    if k >= model.users() || n >= model.slots() {
        return input(format!("user {k} or slot {n} out of range"));
    }
    let [c, dc, _] = model.pilot_conv_jet(k, n, tau);
    Ok((c, dc))
}

/// Measurement-domain signature of a unit-gain path: slot block `n` is
/// `c_k(n, tau) W[n]^H a(theta)`.
pub fn atom(theta: f64, tau: f64, k: usize, model: &MeasurementModel) -> Result<Vec<Complex64>> {
    model.check_params(theta, tau, k)?;
    Ok(model.atom_jet(theta, tau, k, 0).swap_remove(0))
}

/// Exact partial derivatives of [`atom`] in `theta` and `tau` (seconds).
pub fn atom_jacobian(
    theta: f64,
    tau: f64,
    k: usize,
    model: &MeasurementModel,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    model.check_params(theta, tau, k)?;
    let mut jet = model.atom_jet(theta, tau, k, 1);
    let d_tau = jet.pop().unwrap();
    let d_theta = jet.pop().unwrap();
    Ok((d_theta, d_tau))
}

/// Received block `y = A_bar h (+ v)`. With a noise seed, `v[n] = W[n]^H v_bar[n]`
/// for `v_bar[n] ~ CN(0, I_M)` drawn slot by slot.
pub fn apply_forward(
    h: &[Complex64],
    model: &MeasurementModel,
    noise_seed: Option<u64>,
) -> Result<Vec<Complex64>> {
    if h.len() != model.channel_len() {
        return input(format!(
            "channel has length {} but the model expects {}",
            h.len(),
            model.channel_len()
        ));
    }
    let (m, users, taps) = (model.antennas(), model.users(), model.taps());
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let mut y = Vec::with_capacity(model.rows());
    let mut x = nalgebra::DVector::<Complex64>::zeros(m);
    for n in 0..model.slots() {
        x.fill(Complex64::new(0.0, 0.0));
        for d in 0..taps {
            for k in 0..users {
                let s = model.pilots.symbol(k, n as i64 - d as i64);
                let base = channel_index(0, k, d, m, users);
                for (xm, hm) in x.iter_mut().zip(&h[base..base + m]) {
                    *xm += hm * s;
                }
            }
        }
        if let Some(rng) = rng.as_mut() {
            for xm in x.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *xm += Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
            }
        }
        y.extend(model.combiners.matrix(n).ad_mul(&x).iter());
    }
    Ok(y)
}

/// Adjoint map `A_bar^H e` restricted to the listed slots; `e` is a full
/// length-`RN` block. The result has the layout of `h`.
pub fn apply_adjoint(e: &[Complex64], model: &MeasurementModel, slots: &[usize]) -> Result<Vec<Complex64>> {
    if e.len() != model.rows() {
        return input(format!("block has length {} but the model expects {}", e.len(), model.rows()));
    }
    let (m, users, taps, r) = (model.antennas(), model.users(), model.taps(), model.rf_chains());
    let mut out = vec![Complex64::new(0.0, 0.0); model.channel_len()];
    for &n in slots {
        let en = nalgebra::DVector::from_column_slice(&e[n * r..(n + 1) * r]);
        let u = model.combiners.matrix(n) * en;
        for d in 0..taps {
            for k in 0..users {
                let s = model.pilots.symbol(k, n as i64 - d as i64).conj();
                let base = channel_index(0, k, d, m, users);
                for (o, um) in out[base..base + m].iter_mut().zip(u.iter()) {
                    *o += um * s;
                }
            }
        }
    }
    Ok(out)
}
