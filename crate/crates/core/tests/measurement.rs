use gridless_core::array::{assemble_channel, draw_paths};
use gridless_core::measurement::{
    apply_adjoint, apply_forward, atom, atom_jacobian, build_combiners, build_pilots, pilot_convolution,
    zc_sequence,
};
use gridless_core::oracle::{dense_atom, dense_operator};
use gridless_core::selftest::small_model;
use gridless_core::{Complex64, PathParams, TrainingConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const TS: f64 = 1.0 / 600e6;

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn zc_reference_properties() {
    let x = zc_sequence(5, 1).unwrap();
    assert_eq!(x[0], Complex64::new(1.0, 0.0));
    assert!(x.iter().all(|v| (v.norm() - 1.0).abs() < 1e-15));
    for lag in 1..5 {
        let c: Complex64 = (0..5).map(|n| x[n] * x[(n + lag) % 5].conj()).sum();
        assert!(c.norm() < 1e-12, "lag {lag}: {c}");
    }
    // Even lengths use the n^2 form and keep the ideal autocorrelation.
    let y = zc_sequence(16, 3).unwrap();
    for lag in 1..16 {
        let c: Complex64 = (0..16).map(|n| y[n] * y[(n + lag) % 16].conj()).sum();
        assert!(c.norm() < 1e-12, "lag {lag}: {c}");
    }
    assert!(zc_sequence(6, 3).is_err());
    assert!(zc_sequence(0, 1).is_err());
}

#[test]
fn pilot_streams_are_orthogonal_shifts() {
    let snr = 3.5;
    let table = build_pilots(&TrainingConfig::evenly_spaced(3, 63, snr), 4).unwrap();
    let base = zc_sequence(63, 1).unwrap();
    for k in 0..3 {
        assert!(table.stream(k).iter().all(|v| (v.norm() - snr.sqrt()).abs() < 1e-12));
    }
    let s0 = table.stream(0);
    assert!(s0.iter().zip(&base).all(|(a, b)| (a - b * snr.sqrt()).norm() < 1e-12));
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let ip: Complex64 = table.stream(a).iter().zip(table.stream(b)).map(|(x, y)| x * y.conj()).sum();
        assert!(ip.norm() < 1e-9 * snr * 63.0);
    }
}

#[test]
fn pilot_shifts_must_be_separated() {
    let mut cfg = TrainingConfig::evenly_spaced(2, 20, 1.0);
    cfg.shifts = vec![0, 2];
    assert!(build_pilots(&cfg, 4).is_err());
    assert!(build_pilots(&TrainingConfig::evenly_spaced(6, 20, 1.0), 4).is_err());
}

#[test]
fn combiners_are_orthonormal_phase_shifters() {
    for (m, r) in [(16, 4), (15, 5), (8, 8), (7, 1)] {
        let w = build_combiners(m, r, 30, 9).unwrap();
        for n in 0..30 {
            let wn = w.matrix(n);
            let gram = wn.adjoint() * wn;
            assert!((gram - DMatrix::<Complex64>::identity(r, r)).norm() < 1e-12);
            assert!(wn.iter().all(|v| (v.norm() - 1.0 / (m as f64).sqrt()).abs() < 1e-15));
        }
        assert_eq!(w, build_combiners(m, r, 30, 9).unwrap());
    }
    assert!(build_combiners(4, 5, 3, 0).is_err());
}

#[test]
fn pilot_convolution_at_zero_delay_is_the_symbol() {
    let model = small_model(4, 2, 2, 3, 11, 2.0, 1).unwrap();
    for k in 0..2 {
        for n in 0..11 {
            let (c, _) = pilot_convolution(k, n, 0.0, &model).unwrap();
            assert!((c - model.pilots.symbol(k, n as i64)).norm() < 1e-12);
        }
    }
    assert!(pilot_convolution(0, 0, 3.0 * TS, &model).is_err());
}

#[test]
fn forward_map_matches_dense_operator() {
    let model = small_model(4, 2, 1, 2, 5, 1.0, 3).unwrap();
    let paths = draw_paths(&[2], &model.pulse, 4).unwrap();
    let h = assemble_channel(&paths, &model.array, &model.pulse, 1).unwrap().h;
    let y = apply_forward(&h, &model, None).unwrap();
    let dense: Vec<Complex64> = (dense_operator(&model) * DVector::from_vec(h.clone())).iter().copied().collect();
    assert!(rel(&y, &dense) < 1e-10);
    assert!(apply_forward(&h[1..], &model, None).is_err());
    let zero = vec![Complex64::new(0.0, 0.0); h.len()];
    assert!(apply_forward(&zero, &model, None).unwrap().iter().all(|v| v.norm() == 0.0));
}

#[test]
fn adjoint_is_the_dense_adjoint() {
    let model = small_model(4, 2, 2, 2, 9, 1.0, 5).unwrap();
    let e: Vec<Complex64> = (0..model.rows()).map(|i| Complex64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05)).collect();
    let all: Vec<usize> = (0..9).collect();
    let got = apply_adjoint(&e, &model, &all).unwrap();
    let dense: Vec<Complex64> = (dense_operator(&model).adjoint() * DVector::from_vec(e)).iter().copied().collect();
    assert!(rel(&got, &dense) < 1e-10);
}

#[test]
fn post_combining_noise_is_white() {
    let model = small_model(4, 2, 1, 2, 10_000, 1.0, 6).unwrap();
    let zero = vec![Complex64::new(0.0, 0.0); model.channel_len()];
    let v = apply_forward(&zero, &model, Some(77)).unwrap();
    let mut cov = [[Complex64::new(0.0, 0.0); 2]; 2];
    for n in 0..10_000 {
        for a in 0..2 {
            for b in 0..2 {
                cov[a][b] += v[2 * n + a] * v[2 * n + b].conj() / 10_000.0;
            }
        }
    }
    assert!((cov[0][0].re - 1.0).abs() < 0.05 && (cov[1][1].re - 1.0).abs() < 0.05);
    assert!(cov[0][1].norm() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn atoms_match_dense_materialization(seed in 0u64..1000, theta in -1.5f64..1.5, tau in 0.0f64..1.0, k in 0usize..2) {
        let model = small_model(4, 2, 2, 3, 7, 1.5, seed).unwrap();
        let tau = tau * model.pulse.max_delay();
        let a = atom(theta, tau, k, &model).unwrap();
        let d = dense_atom(theta, tau, k, &model).unwrap();
        prop_assert!(rel(&a, &d) < 1e-10);
    }

    #[test]
    fn atom_jacobian_matches_finite_differences(seed in 0u64..1000, theta in -1.5f64..1.5, tau in 0.05f64..0.95) {
        let model = small_model(6, 3, 1, 4, 13, 1.0, seed).unwrap();
        let tau = tau * model.pulse.max_delay();
        let (dt, ds) = atom_jacobian(theta, tau, 0, &model).unwrap();
        let (h, hs) = (1e-6, 1e-6 * TS);
        let fd = |f: &dyn Fn(f64) -> Vec<Complex64>, x: f64, step: f64| -> Vec<Complex64> {
            f(x + step).iter().zip(f(x - step)).map(|(p, q)| (p - q) / (2.0 * step)).collect()
        };
        let ft = fd(&|t| atom(t, tau, 0, &model).unwrap(), theta, h);
        let fs = fd(&|s| atom(theta, s, 0, &model).unwrap(), tau, hs);
        prop_assert!(rel(&dt, &ft) < 1e-6, "theta {}", rel(&dt, &ft));
        prop_assert!(rel(&ds, &fs) < 1e-6, "tau {}", rel(&ds, &fs));
    }

    #[test]
    fn pilot_convolution_derivative_matches_finite_differences(seed in 0u64..100, tau in 0.05f64..0.95, n in 0usize..13) {
        let model = small_model(4, 2, 1, 4, 13, 1.0, seed).unwrap();
        let tau = tau * model.pulse.max_delay();
        let (_, dc) = pilot_convolution(0, n, tau, &model).unwrap();
        let h = 1e-6 * TS;
        let fd = (pilot_convolution(0, n, tau + h, &model).unwrap().0 - pilot_convolution(0, n, tau - h, &model).unwrap().0) / (2.0 * h);
        prop_assert!((dc - fd).norm() <= 1e-6 * dc.norm().max(1.0 / TS));
    }

    /// Column-by-column atoms reproduce the forward map of the assembled channel.
    #[test]
    fn atoms_factor_the_forward_map(seed in 0u64..1000) {
        let model = small_model(8, 3, 2, 4, 21, 2.0, seed).unwrap();
        let paths = draw_paths(&[2, 3], &model.pulse, seed).unwrap();
        let h = assemble_channel(&paths, &model.array, &model.pulse, 2).unwrap().h;
        let y = apply_forward(&h, &model, None).unwrap();
        let mut z = vec![Complex64::new(0.0, 0.0); model.rows()];
        for p in &paths {
            for (zi, ai) in z.iter_mut().zip(atom(p.aoa, p.delay, p.user, &model).unwrap()) {
                *zi += p.gain * ai;
            }
        }
        prop_assert!(rel(&z, &y) < 1e-10);
    }

    #[test]
    fn forward_map_is_linear(seed in 0u64..1000) {
        let model = small_model(5, 2, 1, 3, 9, 1.0, seed).unwrap();
        let p1 = draw_paths(&[1], &model.pulse, seed).unwrap();
        let p2: Vec<PathParams> = draw_paths(&[2], &model.pulse, seed + 1).unwrap();
        let h1 = assemble_channel(&p1, &model.array, &model.pulse, 1).unwrap().h;
        let h2 = assemble_channel(&p2, &model.array, &model.pulse, 1).unwrap().h;
        let sum: Vec<Complex64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
        let y1 = apply_forward(&h1, &model, None).unwrap();
        let y2 = apply_forward(&h2, &model, None).unwrap();
        let ys = apply_forward(&sum, &model, None).unwrap();
        let parts: Vec<Complex64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
        prop_assert!(rel(&ys, &parts) < 1e-12);
    }
}
