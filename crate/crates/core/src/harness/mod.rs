//! Seeded Monte Carlo experiments: draw a channel, simulate the quantized
//! training block, run the estimators and tabulate NMSE.
//!
//! Every random stream of a trial is derived from `(master seed, trial)`, so
//! all estimators, SNR points and bit depths of one trial see the same
//! channel, combiners, noise and CV split.

mod config;
mod plot;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{assemble_channel, draw_paths, ArraySpec, ChannelRealization, PulseSpec};
use crate::baselines::{run_ongrid_fcfgs_cv, run_oracle_stop};
use crate::error::{config as config_err, input, Error, Result};
use crate::estimator::{self, Estimate, EstimatorConfig};
use crate::measurement::{apply_forward, build_combiners, build_pilots, MeasurementModel, TrainingConfig};
use crate::quantizer::{design_quantizer, quantize, QuantizedObservation};
use crate::seed::derive_seed;

pub use config::{EstimatorKind, ExperimentConfig};
pub use plot::{aggregate, emit_plot, SeriesPoint};

/// `||h_hat - h||^2 / ||h||^2`.
pub fn nmse(h_hat: &[Complex64], h: &[Complex64]) -> Result<f64> {
    if h_hat.len() != h.len() {
        return input(format!("lengths differ: {} vs {}", h_hat.len(), h.len()));
    }
    let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    if !(energy > 0.0) {
        return input("true channel is zero");
    }
    let err: f64 = h_hat.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / energy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub bits: u32,
    pub nmse: f64,
    pub path_count: usize,
    pub iterations: usize,
    pub runtime_s: f64,
    /// `(g_est, g_cv)` per outer iteration.
    #[serde(skip)]
    pub trace: Vec<(f64, f64)>,
    /// Digest of the channel and unquantized received block this row used.
    #[serde(skip)]
    pub realization_hash: String,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialResult>,
}

/// Everything one estimator run consumes for a `(trial, snr, bits)` point.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub trial_seed: u64,
    pub channel: ChannelRealization,
    pub model: MeasurementModel,
    pub received: Vec<Complex64>,
    pub obs: QuantizedObservation,
    pub estimator_config: EstimatorConfig,
}

impl TrialData {
    pub fn realization_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.channel.h.iter().chain(&self.received) {
            hasher.update(v.re.to_le_bytes());
            hasher.update(v.im.to_le_bytes());
        }
        hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Simulates the training block of `trial` at one SNR for each bit depth.
pub fn simulate_trial(cfg: &ExperimentConfig, trial: usize, snr_db: f64, bits: &[u32]) -> Result<Vec<TrialData>> {
    let trial_seed = derive_seed(cfg.seed, &[trial as u64]);
    let array = ArraySpec::new(cfg.antennas)?;
    let pulse = PulseSpec::new(cfg.rolloff, cfg.sample_period, cfg.taps)?;
    let paths = draw_paths(&cfg.paths_per_user, &pulse, derive_seed(trial_seed, &[1]))?;
    let channel = assemble_channel(&paths, &array, &pulse, cfg.users)?;
    let snr = 10f64.powf(snr_db / 10.0);
    let pilots = build_pilots(&TrainingConfig::evenly_spaced(cfg.users, cfg.slots, snr), cfg.taps)?;
    let combiners = build_combiners(cfg.antennas, cfg.rf_chains, cfg.slots, derive_seed(trial_seed, &[2]))?;
    let model = MeasurementModel::new(array, pulse, pilots, combiners)?;
    let received = apply_forward(&channel.h, &model, Some(derive_seed(trial_seed, &[3])))?;
    let sigma = real_part_std(&received);
    let estimator_config = EstimatorConfig {
        split_seed: derive_seed(trial_seed, &[4]),
        ..cfg.estimator.clone()
    };
    bits.iter()
        .map(|&b| {
            let spec = design_quantizer(b, sigma)?;
            Ok(TrialData {
                trial_seed,
                channel: channel.clone(),
                model: model.clone(),
                received: received.clone(),
                obs: quantize(&received, &spec)?,
                estimator_config: estimator_config.clone(),
            })
        })
        .collect()
}

/// Empirical standard deviation of the real parts (the AGC reference level).
pub fn real_part_std(y: &[Complex64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().map(|v| v.re).sum::<f64>() / n;
    (y.iter().map(|v| (v.re - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn run_estimator(kind: EstimatorKind, data: &TrialData, true_paths: usize) -> Result<Estimate> {
    match kind {
        EstimatorKind::NfcfgsCv => estimator::run(&data.obs, &data.model, &data.estimator_config),
        EstimatorKind::OngridFcfgsCv => run_ongrid_fcfgs_cv(&data.obs, &data.model, &data.estimator_config),
        EstimatorKind::OracleStop => run_oracle_stop(&data.obs, &data.model, &data.estimator_config, true_paths),
    }
}

fn evaluate(cfg: &ExperimentConfig, trial: usize, snr_db: f64, data: &TrialData, kind: EstimatorKind) -> TrialResult {
    let true_paths = cfg.paths_per_user.iter().sum();
    let started = Instant::now();
    let outcome = run_estimator(kind, data, true_paths).and_then(|est| {
        let err = nmse(&est.h_hat, &data.channel.h)?;
        Ok((est, err))
    });
    let runtime_s = if cfg.record_runtime {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    let mut row = TrialResult {
        trial,
        seed: data.trial_seed,
        estimator: kind,
        snr_db,
        bits: data.obs.quantizer.bits,
        nmse: f64::NAN,
        path_count: 0,
        iterations: 0,
        runtime_s,
        trace: Vec::new(),
        realization_hash: data.realization_hash(),
        error: None,
    };
    match outcome {
        Ok((est, err)) => {
            row.nmse = err;
            row.path_count = est.paths.len();
            row.iterations = est.trace.len();
            row.trace = est.trace.iter().map(|r| (r.g_est, r.g_cv)).collect();
        }
        Err(e) => {
            log::warn!("trial {trial} {kind} failed: {e}");
            row.error = Some(e.to_string());
        }
    }
    row
}

/// Runs the full `(snr, bits, estimator, trial)` sweep. Trials execute on the
/// rayon pool; rows come back ordered by snr, bits, estimator, then trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.snr_db.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let per_job: Vec<Vec<(usize, usize, usize, TrialResult)>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let snr_db = cfg.snr_db[s];
            let data = simulate_trial(cfg, t, snr_db, &cfg.bits)?;
            let mut out = Vec::new();
            for (b, d) in data.iter().enumerate() {
                for (e, &kind) in cfg.estimators.iter().enumerate() {
                    out.push((s, b, e, evaluate(cfg, t, snr_db, d, kind)));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut keyed: Vec<_> = per_job.into_iter().flatten().collect();
    keyed.sort_by_key(|(s, b, e, r)| (*s, *b, *e, r.trial));
    Ok(ResultTable {
        config: cfg.clone(),
        rows: keyed.into_iter().map(|(_, _, _, r)| r).collect(),
    })
}

const CSV_COLUMNS: &str = "trial,seed,estimator,snr_db,bits,nmse,path_count,iterations,runtime_s";

impl ResultTable {
    /// Comment lines carrying the config hash and the resolved config.
    pub fn header(&self) -> Result<String> {
        let text = self.config.to_toml()?;
        let mut out = format!("# gridless simulate config_hash={}\n", self.config.hash()?);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(CSV_COLUMNS);
        out.push('\n');
        Ok(out)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.trial,
                r.seed,
                r.estimator,
                r.snr_db,
                r.bits,
                r.nmse,
                r.path_count,
                r.iterations,
                r.runtime_s
            ));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        Ok(self.header()? + &self.rows_csv())
    }

    /// Writes the table. With `append`, rows go to the end of an existing
    /// file whose header carries the same config hash.
    pub fn write_csv(&self, path: &Path, append: bool) -> Result<()> {
        let existing = append && path.exists() && std::fs::metadata(path)?.len() > 0;
        if existing {
            let first = BufReader::new(File::open(path)?)
                .lines()
                .next()
                .transpose()?
                .unwrap_or_default();
            let want = format!("config_hash={}", self.config.hash()?);
            if !first.contains(&want) {
                return config_err(format!(
                    "{} was written by a different configuration",
                    path.display()
                ));
            }
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.write_all(self.rows_csv().as_bytes())?;
        } else {
            std::fs::write(path, self.to_csv()?).map_err(Error::Io)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_reference_values() {
        let h = vec![Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.0)];
        let zero = vec![Complex64::new(0.0, 0.0); 2];
        let twice: Vec<_> = h.iter().map(|v| v * 2.0).collect();
        assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        assert!((nmse(&zero, &h).unwrap() - 1.0).abs() < 1e-15);
        assert!((nmse(&twice, &h).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&h, &zero).is_err());
    }

    #[test]
    fn empty_trial_count_gives_a_header_only_table() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::desk()
        };
        let table = run_experiment(&cfg).unwrap();
        assert!(table.rows.is_empty());
        let csv = table.to_csv().unwrap();
        assert!(csv.lines().last().unwrap() == CSV_COLUMNS);
    }
}
