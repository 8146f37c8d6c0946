//! Gridless channel estimation for uplink mmWave hybrid MIMO receivers that
//! sit behind low-resolution ADCs.
//!
//! The crate contains both halves of the problem:
//!
//! * a generative simulator: ULA steering, raised-cosine pulse shaping, random
//!   multipath channels, Zadoff-Chu pilots and phase-shifter combiners, the
//!   linear measurement operator and a uniform B-bit ADC model;
//! * the estimator: greedy single-path selection on a coarse grid, Newton
//!   refinement of angle and delay over the continuum, maximum-likelihood gain
//!   refits under the quantized Gaussian likelihood, and a held-out
//!   cross-validation score that decides when to stop adding paths.
//!
//! [`harness`] ties both together into seeded NMSE-versus-SNR experiments.

pub mod array;
pub mod baselines;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod measurement;
pub mod oracle;
pub mod quantizer;
pub mod selftest;
mod seed;

pub use array::{ArraySpec, ChannelRealization, PathParams, PulseSpec};
pub use error::{Error, Result};
pub use estimator::{
    CvSplit, Estimate, EstimatorConfig, Grid, IterationRecord, PathEstimate, StopRule,
};
pub use measurement::{CombinerSchedule, MeasurementModel, PilotTable, TrainingConfig};
pub use quantizer::{BoxDerivatives, QuantizedObservation, QuantizerSpec};
pub use seed::derive_seed;

pub use num_complex::Complex64;
