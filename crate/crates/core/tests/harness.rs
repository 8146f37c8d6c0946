use gridless_core::harness::{
    aggregate, emit_plot, run_estimator, run_experiment, simulate_trial, EstimatorKind, ExperimentConfig, ResultTable,
};

fn small(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        snr_db: vec![0.0, 20.0],
        bits: vec![1, 3],
        trials,
        seed: 5,
        ..ExperimentConfig::desk()
    }
}

#[test]
fn desk_sweep_has_one_row_per_cell() {
    let cfg = ExperimentConfig::desk();
    assert_eq!(cfg.trials, 50);
    let table = run_experiment(&cfg).unwrap();
    assert_eq!(table.rows.len(), 3 * 3 * 2 * 50);
    assert!(table.rows.iter().all(|r| r.error.is_none() && r.nmse >= 0.0 && r.nmse.is_finite()));
    let mut i = 0;
    for &snr in &cfg.snr_db {
        for &bits in &cfg.bits {
            for &kind in &cfg.estimators {
                for trial in 0..50 {
                    let r = &table.rows[i];
                    assert_eq!((r.snr_db, r.bits, r.estimator, r.trial), (snr, bits, kind, trial));
                    assert_eq!(r.iterations, r.trace.len());
                    i += 1;
                }
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let cfg = small(3);
    let a = run_experiment(&cfg).unwrap().to_csv().unwrap();
    let b = run_experiment(&cfg).unwrap().to_csv().unwrap();
    assert_eq!(a, b);
    let other = run_experiment(&ExperimentConfig { seed: 6, ..cfg }).unwrap().to_csv().unwrap();
    assert_ne!(a, other);
    assert!(a.lines().next().unwrap().contains("config_hash="));
}

#[test]
fn estimators_share_each_realization() {
    let cfg = ExperimentConfig {
        estimators: EstimatorKind::ALL.to_vec(),
        ..small(4)
    };
    let table = run_experiment(&cfg).unwrap();
    for r in &table.rows {
        let peers: Vec<_> = table
            .rows
            .iter()
            .filter(|q| q.trial == r.trial && q.snr_db == r.snr_db && q.bits == r.bits)
            .collect();
        assert_eq!(peers.len(), 3);
        assert!(peers.iter().all(|q| q.realization_hash == r.realization_hash && q.seed == r.seed));
    }
    // The channel itself is shared across SNR and bit depth too.
    let lo = simulate_trial(&cfg, 2, 0.0, &[1, 3]).unwrap();
    let hi = simulate_trial(&cfg, 2, 20.0, &[2]).unwrap();
    assert_eq!(lo[0].channel, hi[0].channel);
    assert_eq!(lo[0].received, lo[1].received);
    assert_ne!(lo[0].obs.lo, lo[1].obs.lo);
}

#[test]
fn rows_reproduce_direct_estimator_runs() {
    let cfg = small(2);
    let table = run_experiment(&cfg).unwrap();
    let data = simulate_trial(&cfg, 1, 20.0, &[3]).unwrap().remove(0);
    let est = run_estimator(EstimatorKind::NfcfgsCv, &data, 4).unwrap();
    let row = table
        .rows
        .iter()
        .find(|r| r.trial == 1 && r.snr_db == 20.0 && r.bits == 3 && r.estimator == EstimatorKind::NfcfgsCv)
        .unwrap();
    assert_eq!(row.path_count, est.paths.len());
    assert_eq!(row.nmse, gridless_core::harness::nmse(&est.h_hat, &data.channel.h).unwrap());
}

#[test]
fn runtime_column_is_zero_unless_requested() {
    let cfg = small(1);
    assert!(run_experiment(&cfg).unwrap().rows.iter().all(|r| r.runtime_s == 0.0));
    let timed = ExperimentConfig {
        record_runtime: true,
        ..cfg
    };
    assert!(run_experiment(&timed).unwrap().rows.iter().all(|r| r.runtime_s > 0.0));
}

fn four_bit_table() -> ResultTable {
    run_experiment(&ExperimentConfig {
        bits: vec![1, 2, 3, 12],
        snr_db: vec![0.0, 10.0],
        trials: 2,
        ..ExperimentConfig::desk()
    })
    .unwrap()
}

#[test]
fn plot_has_one_panel_per_bit_depth_and_the_table_means() {
    let table = four_bit_table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig.svg");
    let points = emit_plot(&table, &path).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let captions: std::collections::BTreeSet<&str> = doc
        .descendants()
        .filter_map(|n| n.text())
        .map(str::trim)
        .filter(|t| t.starts_with("B = "))
        .collect();
    assert_eq!(captions.len(), 4, "{captions:?}");

    // Points: 4 bit depths x 2 estimators x 2 SNRs.
    assert_eq!(points.len(), 16);
    for p in &points {
        let cell: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.bits == p.bits && r.estimator == p.estimator && r.snr_db == p.snr_db)
            .map(|r| r.nmse)
            .collect();
        let mean = cell.iter().sum::<f64>() / cell.len() as f64;
        assert_eq!(p.count, cell.len());
        assert!((p.mean_nmse - mean).abs() <= 1e-12 * mean.max(1.0));
    }
    assert_eq!(points, aggregate(&table));
}

#[test]
fn empty_table_cannot_be_plotted() {
    let table = run_experiment(&small(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plot(&table, &dir.path().join("x.svg")).is_err());
}

#[test]
fn csv_appends_only_to_a_matching_header() {
    let cfg = small(1);
    let table = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    table.write_csv(&path, true).unwrap();
    let once = std::fs::read_to_string(&path).unwrap();
    table.write_csv(&path, true).unwrap();
    let twice = std::fs::read_to_string(&path).unwrap();
    assert_eq!(twice, once.clone() + &table.rows_csv());
    assert_eq!(once.lines().filter(|l| l.starts_with("trial,")).count(), 1);

    let other = run_experiment(&ExperimentConfig { seed: 99, ..cfg }).unwrap();
    assert!(other.write_csv(&path, true).is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), twice);
    // Without append the file is replaced.
    other.write_csv(&path, false).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), other.to_csv().unwrap());
}

#[test]
fn csv_columns_are_the_documented_ones() {
    let csv = run_experiment(&small(1)).unwrap().to_csv().unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "trial,seed,estimator,snr_db,bits,nmse,path_count,iterations,runtime_s");
    for line in csv.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 9);
        assert!(fields[5].parse::<f64>().unwrap() >= 0.0);
    }
}
