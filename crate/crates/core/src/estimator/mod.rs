//! Greedy gridless path estimation with cross-validated stopping.
//!
//! Each outer iteration scores every grid point by how strongly one more path
//! there would raise the estimation-row likelihood, refines the winner off
//! the grid with Newton steps, appends it to the support and refits all gains
//! by maximum likelihood. A held-out subset of slots scores every iterate;
//! the loop ends as soon as that score stops improving.

mod polish;
mod refit;
mod score;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{assemble_channel, PathParams};
use crate::error::{config, input, Result};
use crate::measurement::{atom, MeasurementModel};
use crate::quantizer::{log_likelihood, QuantizedObservation};

use polish::polish_locations;

pub use refit::{maximize_gain_likelihood, RefitOutcome, DEGENERATE_CONDITION};
pub use score::{
    coarse_select, newton_refine, score, score_gradient_hessian, AtomEnergy, Grid, Refinement,
    ScoreContext,
};

/// A path location without its gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub aoa: f64,
    pub delay: f64,
    pub user: usize,
}

/// Slot-aligned partition of the received rows into estimation and
/// cross-validation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSplit {
    pub est_rows: Vec<usize>,
    pub cv_rows: Vec<usize>,
    pub est_slots: Vec<usize>,
    pub cv_slots: Vec<usize>,
    pub fraction: f64,
}

/// Assigns `round(fraction * N)` uniformly chosen slots (all `R` rows each)
/// to estimation and the rest to cross-validation.
pub fn split_data(rows: usize, rf_chains: usize, fraction: f64, seed: u64) -> Result<CvSplit> {
    if rf_chains == 0 || !rows.is_multiple_of(rf_chains) {
        return config(format!("{rows} rows do not divide into slots of {rf_chains}"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return config(format!("split fraction must lie in (0, 1), got {fraction}"));
    }
    let slots = rows / rf_chains;
    let n_est = (fraction * slots as f64).round() as usize;
    if n_est == 0 || n_est >= slots {
        return config(format!(
            "fraction {fraction} of {slots} slots leaves one side of the split empty"
        ));
    }
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut est_slots = order[..n_est].to_vec();
    let mut cv_slots = order[n_est..].to_vec();
    est_slots.sort_unstable();
    cv_slots.sort_unstable();
    let expand = |slots: &[usize]| -> Vec<usize> {
        slots
            .iter()
            .flat_map(|&n| n * rf_chains..(n + 1) * rf_chains)
            .collect()
    };
    Ok(CvSplit {
        est_rows: expand(&est_slots),
        cv_rows: expand(&cv_slots),
        est_slots,
        cv_slots,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the held-out log-likelihood fails to increase.
    CrossValidation,
    /// Run exactly this many outer iterations.
    FixedPaths(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Grid points per antenna (angle axis) and per tap (delay axis).
    pub grid_oversampling: (usize, usize),
    pub newton_max_iters: usize,
    /// Newton stops once a step moves less than this, in (rad, samples).
    pub newton_step_tol: f64,
    /// Smallest step fraction tried by the refinement backtracking.
    pub line_search_floor: f64,
    pub refit_tol: f64,
    pub refit_max_iters: usize,
    /// Outer-iteration cap; `None` means `RN / 8`.
    pub max_outer_iters: Option<usize>,
    pub cv_fraction: f64,
    /// Return the iterate with the best held-out score rather than the last.
    pub keep_best_cv: bool,
    pub split_seed: u64,
    /// Off-grid refinement; disabling it gives the on-grid variant.
    pub refine: bool,
    /// Divide the selection score by the atom energy on the estimation rows.
    pub normalize_score: bool,
    /// Cyclic likelihood passes over all selected locations after each refit
    /// (only when `refine` is on).
    pub polish_rounds: usize,
    pub stop: StopRule,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            grid_oversampling: (2, 2),
            newton_max_iters: 10,
            newton_step_tol: 1e-8,
            line_search_floor: 2f64.powi(-20),
            refit_tol: 1e-7,
            refit_max_iters: 100,
            max_outer_iters: None,
            cv_fraction: 0.8,
            keep_best_cv: true,
            split_seed: 0,
            refine: true,
            normalize_score: true,
            polish_rounds: 1,
            stop: StopRule::CrossValidation,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.grid_oversampling;
        if a == 0 || b == 0 {
            return config("grid oversampling factors must be positive");
        }
        if !(self.newton_step_tol > 0.0 && self.refit_tol > 0.0) {
            return config("tolerances must be positive");
        }
        if !(self.line_search_floor > 0.0 && self.line_search_floor <= 1.0) {
            return config("line-search floor must lie in (0, 1]");
        }
        if self.refit_max_iters == 0 || self.max_outer_iters == Some(0) {
            return config("iteration caps must be positive");
        }
        if self.stop == StopRule::FixedPaths(0) {
            return config("a fixed stop needs at least one path");
        }
        Ok(())
    }

    pub fn outer_cap(&self, rows: usize) -> usize {
        self.max_outer_iters.unwrap_or((rows / 8).max(1))
    }
}

/// One outer iteration of the greedy loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Estimation-row log-likelihood after the refit.
    pub g_est: f64,
    /// Held-out log-likelihood after the refit.
    pub g_cv: f64,
    pub coarse: PathEstimate,
    pub refinement: Refinement,
    /// Whole support after this iteration, including any polished moves.
    pub support: Vec<PathEstimate>,
    /// Estimation-row log-likelihood gained by polishing locations.
    pub polish_gain: f64,
    /// All gains after this iteration's refit, in support order.
    pub gains: Vec<Complex64>,
    pub refit: RefitSummary,
    /// The new path coincides with one already in the support.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitSummary {
    pub loglik_start: f64,
    pub loglik_end: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
}

impl From<&RefitOutcome> for RefitSummary {
    fn from(r: &RefitOutcome) -> Self {
        Self {
            loglik_start: r.loglik_start,
            loglik_end: r.loglik_end,
            grad_norm: r.grad_norm,
            iterations: r.iterations,
            converged: r.converged,
            degenerate: r.degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Selected paths with their fitted gains.
    pub paths: Vec<PathParams>,
    pub h_hat: Vec<Complex64>,
    pub trace: Vec<IterationRecord>,
    pub split: CvSplit,
    /// Number of paths in the returned estimate (index into the trace + 1).
    pub selected: usize,
    /// The outer-iteration cap ended the loop.
    pub truncated: bool,
}

impl Estimate {
    pub fn gains(&self) -> Vec<Complex64> {
        self.paths.iter().map(|p| p.gain).collect()
    }

    /// Paths and gains as they stood after outer iteration `t` (0-based).
    pub fn iterate(&self, t: usize) -> Vec<PathParams> {
        let rec = &self.trace[t];
        rec.gains
            .iter()
            .zip(&rec.support)
            .map(|(&gain, p)| PathParams {
                gain,
                aoa: p.aoa,
                delay: p.delay,
                user: p.user,
            })
            .collect()
    }
}

/// Held-out log-likelihood of the current estimate; `-inf` for an empty support.
pub fn cv_score(
    gains: &[Complex64],
    atoms: &DMatrix<Complex64>,
    obs: &QuantizedObservation,
    split: &CvSplit,
) -> Result<f64> {
    if gains.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    log_likelihood(gains, atoms, obs, &split.cv_rows)
}

/// Dense `RN x |P|` matrix of atoms for a support.
pub fn atom_matrix(paths: &[PathEstimate], model: &MeasurementModel) -> Result<DMatrix<Complex64>> {
    let cols = paths
        .iter()
        .map(|p| atom(p.aoa, p.delay, p.user, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(model.rows(), paths.len(), |i, j| cols[j][i]))
}

/// Maximum-likelihood gains of a support on the estimation rows.
pub fn refit_gains(
    paths: &[PathEstimate],
    model: &MeasurementModel,
    obs: &QuantizedObservation,
    split: &CvSplit,
    warm: &[Complex64],
    cfg: &EstimatorConfig,
) -> Result<RefitOutcome> {
    let atoms = atom_matrix(paths, model)?;
    maximize_gain_likelihood(&atoms, obs, &split.est_rows, warm, cfg.refit_tol, cfg.refit_max_iters)
}

/// `h = F(P) alpha` for estimated paths.
pub fn reconstruct(paths: &[PathParams], model: &MeasurementModel) -> Result<Vec<Complex64>> {
    Ok(assemble_channel(paths, &model.array, &model.pulse, model.users())?.h)
}

fn same_location(a: &PathEstimate, b: &PathEstimate, ts: f64) -> bool {
    a.user == b.user && (a.aoa - b.aoa).abs() < 1e-9 && (a.delay - b.delay).abs() < 1e-9 * ts
}

/// Runs the greedy estimator on a quantized block.
pub fn run(obs: &QuantizedObservation, model: &MeasurementModel, cfg: &EstimatorConfig) -> Result<Estimate> {
    cfg.validate()?;
    if obs.len() != model.rows() {
        return input(format!(
            "observation has {} rows but the model produces {}",
            obs.len(),
            model.rows()
        ));
    }
    let rows = model.rows();
    let split = split_data(rows, model.rf_chains(), cfg.cv_fraction, cfg.split_seed)?;
    let grid = Grid::new(model, cfg.grid_oversampling);
    let energy = cfg.normalize_score.then(|| AtomEnergy::new(model, &split.est_slots));
    let cap = match cfg.stop {
        StopRule::FixedPaths(n) => n,
        StopRule::CrossValidation => cfg.outer_cap(rows),
    };

    let mut support: Vec<PathEstimate> = Vec::new();
    let mut columns: Vec<Vec<Complex64>> = Vec::new();
    let mut gains: Vec<Complex64> = Vec::new();
    let mut mean = vec![Complex64::new(0.0, 0.0); rows];
    let mut trace = Vec::new();
    let mut cv_stop = false;

    while trace.len() < cap {
        let best_so_far = trace.last().map_or(f64::NEG_INFINITY, |r: &IterationRecord| r.g_cv);
        let ctx = ScoreContext::new(model, obs, &split, &mean)?;
        let ctx = match &energy {
            Some(en) => ctx.normalized(en),
            None => ctx,
        };
        let (coarse, f_coarse) = coarse_select(&grid, &ctx)?;
        let refinement = if cfg.refine {
            newton_refine(coarse, &ctx, cfg)?
        } else {
            Refinement {
                path: coarse,
                score_start: f_coarse,
                score_end: f_coarse,
                steps: Vec::new(),
                newton_steps: 0,
                gradient_steps: 0,
            }
        };
        let path = refinement.path;
        let duplicate = support
            .iter()
            .any(|p| same_location(p, &path, model.pulse.sample_period));
        if duplicate {
            log::warn!("path {path:?} selected twice");
        }
        support.push(path);
        columns.push(atom(path.aoa, path.delay, path.user, model)?);
        let mut atoms = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        let mut warm = gains.clone();
        warm.push(Complex64::new(0.0, 0.0));
        let mut refit = maximize_gain_likelihood(
            &atoms,
            obs,
            &split.est_rows,
            &warm,
            cfg.refit_tol,
            cfg.refit_max_iters,
        )?;
        let mut polish_gain = 0.0;
        if cfg.refine {
            for _ in 0..cfg.polish_rounds {
                let mut polished = refit.gains.clone();
                let (before, after) =
                    polish_locations(&mut support, &mut columns, &mut polished, model, obs, &split.est_rows, cfg)?;
                if !(after > before) {
                    break;
                }
                polish_gain += after - before;
                atoms = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
                refit = maximize_gain_likelihood(
                    &atoms,
                    obs,
                    &split.est_rows,
                    &polished,
                    cfg.refit_tol,
                    cfg.refit_max_iters,
                )?;
            }
        }
        if refit.degenerate {
            log::warn!("near-collinear support of {} paths", support.len());
        }
        gains = refit.gains.clone();
        for (i, m) in mean.iter_mut().enumerate() {
            *m = (0..gains.len()).map(|j| atoms[(i, j)] * gains[j]).sum();
        }
        let g_cv = cv_score(&gains, &atoms, obs, &split)?;
        trace.push(IterationRecord {
            g_est: refit.loglik_end,
            g_cv,
            coarse,
            refinement,
            support: support.clone(),
            polish_gain,
            gains: gains.clone(),
            refit: RefitSummary::from(&refit),
            duplicate,
        });
        if cfg.stop == StopRule::CrossValidation && !(g_cv > best_so_far) {
            cv_stop = true;
            break;
        }
    }

    let truncated = cfg.stop == StopRule::CrossValidation && !cv_stop;
    let selected = match cfg.stop {
        StopRule::CrossValidation if cfg.keep_best_cv => {
            let mut best = 0;
            for (t, rec) in trace.iter().enumerate() {
                if rec.g_cv > trace[best].g_cv {
                    best = t;
                }
            }
            best + 1
        }
        _ => trace.len(),
    };
    let mut estimate = Estimate {
        paths: Vec::new(),
        h_hat: Vec::new(),
        trace,
        split,
        selected,
        truncated,
    };
    estimate.paths = if selected == 0 {
        Vec::new()
    } else {
        estimate.iterate(selected - 1)
    };
    estimate.h_hat = reconstruct(&estimate.paths, model)?;
    Ok(estimate)
}
