//! Reference variants of the estimator: on-grid selection (no off-grid
//! refinement) and an oracle stop that knows the true number of paths.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::estimator::{self, Estimate, EstimatorConfig, StopRule};
use crate::measurement::MeasurementModel;
use crate::quantizer::QuantizedObservation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OngridFcfgsCv,
    OracleStopNfcfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub estimator: EstimatorConfig,
}

/// Cross-validated greedy selection restricted to the grid.
pub fn run_ongrid_fcfgs_cv(
    obs: &QuantizedObservation,
    model: &MeasurementModel,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    let cfg = EstimatorConfig {
        refine: false,
        ..cfg.clone()
    };
    estimator::run(obs, model, &cfg)
}

/// Gridless estimator run for exactly `true_path_count` iterations.
pub fn run_oracle_stop(
    obs: &QuantizedObservation,
    model: &MeasurementModel,
    cfg: &EstimatorConfig,
    true_path_count: usize,
) -> Result<Estimate> {
    if true_path_count == 0 {
        return config("oracle stop needs at least one path");
    }
    let cfg = EstimatorConfig {
        stop: StopRule::FixedPaths(true_path_count),
        ..cfg.clone()
    };
    estimator::run(obs, model, &cfg)
}

pub fn run_baseline(
    obs: &QuantizedObservation,
    model: &MeasurementModel,
    cfg: &BaselineConfig,
    true_path_count: usize,
) -> Result<Estimate> {
    match cfg.kind {
        BaselineKind::OngridFcfgsCv => run_ongrid_fcfgs_cv(obs, model, &cfg.estimator),
        BaselineKind::OracleStopNfcfgs => run_oracle_stop(obs, model, &cfg.estimator, true_path_count),
    }
}
