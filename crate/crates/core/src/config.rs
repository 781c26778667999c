//! Experiment configuration, read from a sectioned `key = value` file.
//!
//! Every field has a default, so an empty file (or one holding only the
//! version line) yields [`ExperimentConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlannerConfig;
use crate::predictor::TrainingConfig;
use crate::scenario::ScenarioConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config {path} has format_version {found}, expected {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    /// History length `H` in steps.
    pub history_steps: usize,
    /// Prediction horizon `T_h` in steps.
    pub horizon_steps: usize,
    pub training: TrainingConfig,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            history_steps: 10,
            horizon_steps: 30,
            training: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub ensemble_sizes: Vec<usize>,
    pub collect_episodes: usize,
    pub heldout_episodes: usize,
    pub eval_episodes: usize,
    pub collect_seed: u64,
    pub heldout_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
    /// Repetitions of the scripted right-then-left study.
    pub right_then_left_reps: usize,
    pub right_then_left_seed: u64,
    /// Write one log file per evaluation episode.
    pub episode_logs: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let mut e = Self {
            ensemble_sizes: vec![1, 2, 5, 10],
            collect_episodes: 400,
            heldout_episodes: 300,
            eval_episodes: 500,
            collect_seed: 0,
            heldout_seed: 0,
            train_seed: 0,
            eval_seed: 0,
            right_then_left_reps: 50,
            right_then_left_seed: 0,
            episode_logs: false,
            output_dir: PathBuf::from("runs"),
        };
        e.reseed(0);
        e
    }
}

impl ExperimentSection {
    /// Derives every seed from `base` so the streams never overlap for
    /// realistic episode counts.
    pub fn reseed(&mut self, base: u64) {
        self.collect_seed = base;
        self.heldout_seed = base.wrapping_add(1_000_000);
        self.train_seed = base.wrapping_add(2_000_000);
        self.eval_seed = base.wrapping_add(5_000_000);
        self.right_then_left_seed = base.wrapping_add(9_000_000);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    pub planner: PlannerConfig,
    pub predictor: PredictorSection,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut c = Self {
            format_version: FORMAT_VERSION,
            scenario: ScenarioConfig::default(),
            planner: PlannerConfig::default(),
            predictor: PredictorSection::default(),
            experiment: ExperimentSection::default(),
        };
        c.sync();
        c
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, Path::new("<string>"))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if c.format_version != FORMAT_VERSION {
            return Err(ConfigError::Version {
                path: path.to_path_buf(),
                found: c.format_version,
            });
        }
        c.sync();
        c.validate()?;
        Ok(c)
    }

    /// Copies the shared timing fields into the sections that use them.
    fn sync(&mut self) {
        self.scenario.history_steps = self.predictor.history_steps;
        self.scenario.horizon_steps = self.predictor.horizon_steps;
        self.scenario.dt = self.planner.dt;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate().map_err(ConfigError::Invalid)?;
        self.planner.validate().map_err(ConfigError::Invalid)?;
        let p = &self.predictor;
        if p.history_steps == 0 || p.horizon_steps == 0 {
            return Err(ConfigError::Invalid("H and T_h must be positive".into()));
        }
        let t = &p.training;
        if t.hidden_layers.contains(&0) || t.batch_size == 0 || !(t.learning_rate > 0.0) {
            return Err(ConfigError::Invalid(
                "hidden widths, batch size and learning rate must be positive".into(),
            ));
        }
        let sizes = &self.experiment.ensemble_sizes;
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(ConfigError::Invalid("ensemble sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn max_ensemble_size(&self) -> usize {
        self.experiment.ensemble_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let w = &c.planner.weights;
        assert_eq!((w.k_j, w.k_t, w.k_p), (0.1, 0.1, 1.0));
        assert_eq!((c.planner.dt, c.planner.k), (0.1, 10));
        assert_eq!(c.scenario.history_steps, 10);
        assert_eq!(c.scenario.horizon_steps, 30);
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = ExperimentConfig::default();
        c.planner.weights.k_p = 2.5;
        c.experiment.ensemble_sizes = vec![1, 3];
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_sync() {
        let c = ExperimentConfig::from_toml(
            "format_version = 1\n[planner]\ndt = 0.05\n[predictor]\nhistory_steps = 6\n",
        )
        .unwrap();
        assert_eq!(c.scenario.dt, 0.05);
        assert_eq!(c.scenario.history_steps, 6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::from_toml("format_version = 2"),
            Err(ConfigError::Version { found: 2, .. })
        ));
        assert!(ExperimentConfig::from_toml("[planner]\nkj = 1.0").is_err());
        assert!(matches!(
            ExperimentConfig::from_toml("[planner]\nk = 7"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
