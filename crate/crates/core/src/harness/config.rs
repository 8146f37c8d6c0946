use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::PulseSpec;
use crate::error::{config, Error, Result};
use crate::estimator::EstimatorConfig;
use crate::quantizer::MAX_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    NfcfgsCv,
    OngridFcfgsCv,
    OracleStop,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [Self::NfcfgsCv, Self::OngridFcfgsCv, Self::OracleStop];

    pub fn name(self) -> &'static str {
        match self {
            Self::NfcfgsCv => "nfcfgs_cv",
            Self::OngridFcfgsCv => "ongrid_fcfgs_cv",
            Self::OracleStop => "oracle_stop",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

/// One Monte Carlo sweep. Read from a TOML file of flat keys, with estimator
/// overrides under an optional `[estimator]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub antennas: usize,
    pub rf_chains: usize,
    pub users: usize,
    pub taps: usize,
    pub slots: usize,
    /// Seconds.
    pub sample_period: f64,
    pub rolloff: f64,
    pub paths_per_user: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub bits: Vec<u32>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Fill the runtime column with wall-clock time. Off by default so that
    /// repeated runs give identical files.
    pub record_runtime: bool,
    /// Output locations are not part of the experiment identity and are
    /// never echoed or hashed.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub plot: Option<PathBuf>,
    pub estimator: EstimatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            rf_chains: 8,
            users: 4,
            taps: 4,
            slots: 1600,
            sample_period: 1.0 / 600e6,
            rolloff: PulseSpec::DEFAULT_ROLLOFF,
            paths_per_user: vec![2; 4],
            snr_db: (0..9).map(|i| -10.0 + 5.0 * i as f64).collect(),
            bits: vec![1, 2, 3, 4],
            trials: 100,
            seed: 0,
            estimators: vec![EstimatorKind::NfcfgsCv, EstimatorKind::OngridFcfgsCv],
            record_runtime: false,
            out: None,
            plot: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Scaled-down setting that runs in minutes on a laptop.
    pub fn desk() -> Self {
        Self {
            antennas: 16,
            rf_chains: 4,
            users: 2,
            taps: 4,
            slots: 400,
            paths_per_user: vec![2; 2],
            snr_db: vec![0.0, 10.0, 20.0],
            bits: vec![1, 2, 3],
            trials: 50,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Short digest of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.antennas, self.rf_chains, self.users, self.taps, self.slots];
        if dims.contains(&0) {
            return config("array, user, tap and slot counts must be positive");
        }
        if self.rf_chains > self.antennas {
            return config(format!(
                "{} RF chains exceed {} antennas",
                self.rf_chains, self.antennas
            ));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return config("sample period must be positive");
        }
        if self.paths_per_user.len() != self.users {
            return config(format!(
                "paths_per_user lists {} users but users = {}",
                self.paths_per_user.len(),
                self.users
            ));
        }
        if self.paths_per_user.contains(&0) {
            return config("every user needs at least one path");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return config("SNR values must be finite");
        }
        if let Some(b) = self.bits.iter().find(|&&b| b == 0 || b > MAX_BITS) {
            return config(format!("bits = {b} outside 1..={MAX_BITS}"));
        }
        if self.estimators.is_empty() {
            return config("no estimators selected");
        }
        self.estimator.validate()
    }
}
