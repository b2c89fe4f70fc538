//! JSON run configuration.
//!
//! Every field has a default, so `{}` plus a dataset is a complete file.
//! Relative dataset paths are kept as written and resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{Connectivity, OnlineConfig, Strategy, StrategyConfig};
use crate::forecaster::ForecasterConfig;
use crate::graph::KernelConfig;
use crate::metrics::SepaConfig;
use crate::pruning::ControllerConfig;
use crate::synth::SynthConfig;

pub const ALLOWED_HORIZONS: [usize; 3] = [3, 6, 12];
pub const ALLOWED_WINDOW_SIZES: [usize; 2] = [70, 140];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub speeds: PathBuf,
    pub distances: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<PathBuf>,
    /// `sensor_id,cloudlet_id`; takes precedence over radius placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<PathBuf>,
}

impl DatasetFiles {
    pub fn resolved(&self, base: &Path) -> DatasetFiles {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        DatasetFiles {
            speeds: r(&self.speeds),
            distances: r(&self.distances),
            positions: self.positions.as_ref().map(r),
            centers: self.centers.as_ref().map(r),
            assignment: self.assignment.as_ref().map(r),
        }
    }

    fn check(&self, base: &Path) -> Result<()> {
        if self.assignment.is_none() && (self.positions.is_none() || self.centers.is_none()) {
            return Err(Error::Config(
                "dataset needs either an assignment file or both positions and centers".into(),
            ));
        }
        let r = self.resolved(base);
        let all = [Some(&r.speeds), Some(&r.distances), r.positions.as_ref(), r.centers.as_ref(), r.assignment.as_ref()];
        for p in all.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Files(DatasetFiles),
    /// Generated in memory at run time.
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Keep only this many leading steps of the speed series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub radius_m: f64,
    pub kernel: KernelConfig,
    /// Dependency depth; defaults to the forecaster's receptive field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_hops: Option<usize>,
    pub train_ratio: f64,
    pub per_sensor_standardization: bool,
    pub horizon: usize,
    pub window_size: usize,
    pub connectivity: Connectivity,
    pub strategy: Strategy,
    pub aggregation_period: usize,
    pub gossip_fanout: usize,
    pub controller: ControllerConfig,
    pub sepa: SepaConfig,
    pub forecaster: ForecasterConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            max_steps: None,
            radius_m: 8000.0,
            kernel: KernelConfig::default(),
            l_hops: None,
            train_ratio: 0.8,
            per_sensor_standardization: false,
            horizon: 12,
            window_size: 140,
            connectivity: Connectivity::Adaptive,
            strategy: Strategy::TraditionalFl,
            aggregation_period: 1,
            gossip_fanout: 1,
            controller: ControllerConfig::default(),
            sepa: SepaConfig::default(),
            forecaster: ForecasterConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parse and validate; relative paths are checked against the file's
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate(&config_dir(path))?;
        Ok(cfg)
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        if !ALLOWED_HORIZONS.contains(&self.horizon) {
            return Err(Error::Config(format!("horizon must be one of {ALLOWED_HORIZONS:?}, got {}", self.horizon)));
        }
        if !ALLOWED_WINDOW_SIZES.contains(&self.window_size) {
            return Err(Error::Config(format!(
                "window_size must be one of {ALLOWED_WINDOW_SIZES:?}, got {}",
                self.window_size
            )));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio)));
        }
        if !(self.radius_m > 0.0) {
            return Err(Error::Config(format!("radius_m must be positive, got {}", self.radius_m)));
        }
        if !(self.kernel.sigma_m > 0.0 && self.kernel.cutoff_m > 0.0) {
            return Err(Error::Config("kernel sigma and cutoff must be positive".into()));
        }
        match &self.dataset {
            DatasetSource::Files(f) => f.check(base)?,
            DatasetSource::Synthetic(s) => s.validate()?,
        }
        self.online().validate()
    }

    pub fn l_hops(&self) -> usize {
        self.l_hops.unwrap_or_else(|| self.forecaster.receptive_hops())
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy,
            period: self.aggregation_period,
            fanout: self.gossip_fanout,
            seed: self.seed,
        }
    }

    pub fn online(&self) -> OnlineConfig {
        OnlineConfig {
            strategy: self.strategy_config(),
            connectivity: self.connectivity,
            controller: self.controller,
            sepa: self.sepa,
            forecaster: self.forecaster,
            horizon: self.horizon,
            window_size: self.window_size,
        }
    }
}

/// Directory relative dataset paths are resolved against.
pub fn config_dir(config_path: &Path) -> PathBuf {
    match config_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
