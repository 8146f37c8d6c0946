//! Brute-force reference constructions used by the test suites and the
//! `selftest` command. Nothing here is on the estimator's execution path.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::array::{assemble_channel, channel_index, PathParams};
use crate::error::Result;
use crate::measurement::MeasurementModel;

/// Dense `A_bar` with block row `n` equal to `s_n^T kron W[n]^H`, where
/// `s_n = [s[n]; s[n-1]; ..; s[n-D+1]]` stacks the users of each tap.
pub fn dense_operator(model: &MeasurementModel) -> DMatrix<Complex64> {
    let (m, users, taps, r) = (model.antennas(), model.users(), model.taps(), model.rf_chains());
    let mut a = DMatrix::zeros(model.rows(), model.channel_len());
    for n in 0..model.slots() {
        let w = model.combiners.matrix(n);
        for d in 0..taps {
            for k in 0..users {
                let s = model.pilots.symbol(k, n as i64 - d as i64);
                for row in 0..r {
                    for col in 0..m {
                        a[(n * r + row, channel_index(col, k, d, m, users))] = s * w[(col, row)].conj();
                    }
                }
            }
        }
    }
    a
}

/// Atom obtained by materializing `A_bar F` for a single unit-gain path.
pub fn dense_atom(theta: f64, tau: f64, k: usize, model: &MeasurementModel) -> Result<Vec<Complex64>> {
    let path = PathParams {
        gain: Complex64::new(1.0, 0.0),
        aoa: theta,
        delay: tau,
        user: k,
    };
    let h = assemble_channel(&[path], &model.array, &model.pulse, model.users())?.h;
    let a = dense_operator(model);
    Ok((a * nalgebra::DVector::from_vec(h)).iter().copied().collect())
}

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference<T, F>(f: F, x: f64, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Element-wise central difference of a vector-valued map.
pub fn central_difference_vec<F>(f: F, x: f64, h: f64) -> Vec<Complex64>
where
    F: Fn(f64) -> Vec<Complex64>,
{
    let (p, m) = (f(x + h), f(x - h));
    p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

/// `||a - b|| / ||b||`, falling back to the absolute error when `b` is zero.
pub fn relative_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
