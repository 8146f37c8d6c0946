use gridless_core::array::assemble_channel;
use gridless_core::baselines::{run_baseline, run_ongrid_fcfgs_cv, run_oracle_stop, BaselineConfig, BaselineKind};
use gridless_core::estimator;
use gridless_core::harness::{nmse, real_part_std, simulate_trial, ExperimentConfig};
use gridless_core::measurement::apply_forward;
use gridless_core::quantizer::{design_quantizer, quantize};
use gridless_core::selftest::small_model;
use gridless_core::{Complex64, EstimatorConfig, Grid, PathParams};

fn desk_point(trial: usize, snr_db: f64, bits: u32) -> gridless_core::harness::TrialData {
    let cfg = ExperimentConfig::desk();
    simulate_trial(&cfg, trial, snr_db, &[bits]).unwrap().remove(0)
}

#[test]
fn ongrid_paths_lie_on_the_grid() {
    for trial in 0..5 {
        let d = desk_point(trial, 10.0, 2);
        let est = run_ongrid_fcfgs_cv(&d.obs, &d.model, &d.estimator_config).unwrap();
        let grid = Grid::new(&d.model, d.estimator_config.grid_oversampling);
        assert!(!est.paths.is_empty());
        for p in &est.paths {
            assert!(grid.theta_points.contains(&p.aoa), "{p:?}");
            assert!(grid.tau_points.contains(&p.delay), "{p:?}");
        }
        let g: Vec<f64> = est.trace.iter().map(|r| r.g_est).collect();
        assert!(g.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn ongrid_truth_gives_matching_supports() {
    // Paths placed on the grid: refinement has nothing to correct, so both
    // variants must find the same locations.
    let mut agree = 0;
    for seed in 0..20u64 {
        let model = small_model(8, 4, 2, 4, 127, 100.0, seed).unwrap();
        let cfg = EstimatorConfig {
            split_seed: seed,
            ..EstimatorConfig::default()
        };
        let grid = Grid::new(&model, cfg.grid_oversampling);
        let nt = grid.theta_points.len();
        let paths: Vec<PathParams> = (0..2)
            .map(|k| PathParams {
                gain: Complex64::from_polar(1.0, 0.7 * (seed + k) as f64),
                aoa: grid.theta_points[(3 + 5 * k as usize + seed as usize) % (nt - 2) + 1],
                delay: grid.tau_points[(seed as usize + 2 * k as usize) % grid.tau_points.len()],
                user: k as usize,
            })
            .collect();
        let h = assemble_channel(&paths, &model.array, &model.pulse, 2).unwrap().h;
        let y = apply_forward(&h, &model, Some(seed + 11)).unwrap();
        let obs = quantize(&y, &design_quantizer(12, real_part_std(&y)).unwrap()).unwrap();

        let on = run_ongrid_fcfgs_cv(&obs, &model, &cfg).unwrap();
        let off = estimator::run(&obs, &model, &cfg).unwrap();
        let (dt, ds) = (grid.theta_points[1] - grid.theta_points[0], grid.tau_points[1] - grid.tau_points[0]);
        let same = on.paths.len() == off.paths.len()
            && on.paths.iter().zip(&off.paths).all(|(a, b)| {
                a.user == b.user && (a.aoa - b.aoa).abs() < 0.5 * dt && (a.delay - b.delay).abs() < 0.5 * ds
            });
        let found = paths
            .iter()
            .all(|t| on.paths.iter().any(|p| p.user == t.user && p.aoa == t.aoa && p.delay == t.delay));
        if same && found {
            agree += 1;
        }
    }
    assert!(agree >= 18, "{agree}/20");
}

#[test]
fn oracle_stop_returns_exactly_the_true_count() {
    let d = desk_point(0, 10.0, 4);
    for count in [1, 3, 4, 6] {
        let est = run_oracle_stop(&d.obs, &d.model, &d.estimator_config, count).unwrap();
        assert_eq!(est.paths.len(), count);
        assert_eq!(est.trace.len(), count);
    }
    assert!(run_oracle_stop(&d.obs, &d.model, &d.estimator_config, 0).is_err());
}

#[test]
fn baselines_are_deterministic() {
    let d = desk_point(3, 0.0, 1);
    for kind in [BaselineKind::OngridFcfgsCv, BaselineKind::OracleStopNfcfgs] {
        let cfg = BaselineConfig {
            kind,
            estimator: d.estimator_config.clone(),
        };
        let a = run_baseline(&d.obs, &d.model, &cfg, 4).unwrap();
        let b = run_baseline(&d.obs, &d.model, &cfg, 4).unwrap();
        assert_eq!(a.h_hat, b.h_hat);
        assert_eq!(a.paths, b.paths);
    }
}

#[test]
fn ongrid_error_floor_exceeds_gridless_on_average() {
    let (mut on, mut off) = (0.0, 0.0);
    for trial in 0..100 {
        let d = desk_point(trial, 20.0, 3);
        let a = run_ongrid_fcfgs_cv(&d.obs, &d.model, &d.estimator_config).unwrap();
        let b = estimator::run(&d.obs, &d.model, &d.estimator_config).unwrap();
        on += nmse(&a.h_hat, &d.channel.h).unwrap();
        off += nmse(&b.h_hat, &d.channel.h).unwrap();
    }
    assert!(on >= off, "on-grid {} vs gridless {}", on / 100.0, off / 100.0);
}
