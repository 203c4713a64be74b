//! Experiment configuration, one TOML section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characterization::StaircaseConfig;
use crate::crossbar::CrossbarConfig;
use crate::device::VariabilityConfig;
use crate::error::{Error, Result};
use crate::perceptron::{SweepMode, TrainConfig, DEFAULT_ERROR_LEVELS, DEFAULT_THRESHOLD};
use crate::tuning::TuningConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of a run derives from it.
    pub seed: u64,
    pub trials: usize,
    pub crossbar: CrossbarConfig,
    pub device: VariabilityConfig,
    pub tuning: TuningConfig,
    pub characterization: StaircaseConfig,
    pub dc_sweep: DcSweepConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10,
            crossbar: CrossbarConfig::default(),
            device: VariabilityConfig::default(),
            tuning: TuningConfig::default(),
            characterization: StaircaseConfig::default(),
            dc_sweep: DcSweepConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcSweepConfig {
    pub row: usize,
    pub col: usize,
    pub v_peak_pos: f64,
    pub v_peak_neg: f64,
    pub points: usize,
}

impl Default for DcSweepConfig {
    fn default() -> Self {
        Self {
            row: 0,
            col: 0,
            v_peak_pos: 2.0,
            v_peak_neg: -2.0,
            points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub error_levels: Vec<f64>,
    pub mode: SweepMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            error_levels: DEFAULT_ERROR_LEVELS.to_vec(),
            mode: SweepMode::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub mnist_dir: Option<PathBuf>,
    /// Graymap with the tuning targets.
    pub pattern: Option<PathBuf>,
    /// Perceptron checkpoint.
    pub model: Option<PathBuf>,
    pub threshold: u8,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test images.
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: None,
            pattern: None,
            model: None,
            threshold: DEFAULT_THRESHOLD,
            train_limit: None,
            test_limit: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Train config with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.crossbar.validate()?;
        self.device.validate()?;
        self.tuning.validate()?;
        self.characterization.validate()?;
        self.train.validate()?;
        if self.trials == 0 {
            return Err(Error::config("trials must be >= 1"));
        }
        if let Some(e) = self.sweep.error_levels.iter().find(|e| !(**e > 0.0 && **e <= 0.5)) {
            return Err(Error::config(format!("sweep error level {e} outside (0, 0.5]")));
        }
        let d = &self.dc_sweep;
        if d.row >= self.crossbar.rows || d.col >= self.crossbar.cols {
            return Err(Error::config("dc_sweep device lies outside the array"));
        }
        if d.points < 4 {
            return Err(Error::config("dc_sweep needs at least 4 points"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossbar::SolverMode;

    #[test]
    fn sections_override_defaults() {
        let cfg = ExperimentConfig::parse(
            "seed = 7\n[crossbar]\nrows = 8\ncols = 16\nsolver_mode = \"nodal\"\n[tuning]\ntolerance_rel = 0.01\n[sweep]\nmode = \"full-crossbar\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!((cfg.crossbar.rows, cfg.crossbar.cols), (8, 16));
        assert_eq!(cfg.crossbar.solver_mode, SolverMode::Nodal);
        assert_eq!(cfg.tuning.tolerance_rel, 0.01);
        assert_eq!(cfg.tuning.step_set, 0.004);
        assert_eq!(cfg.sweep.mode, SweepMode::FullCrossbar);
        assert_eq!(cfg.train_config().seed, 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert!(ExperimentConfig::parse("[tuning]\ntolerance = 0.1\n").is_err());
        assert!(ExperimentConfig::parse("[bogus]\n").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.error_levels = vec![0.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.dc_sweep.row = 64;
        assert!(cfg.validate().is_err());
    }
}
