//! Run configuration: one TOML file with a section per module. Keys that
//! carry physical units name them (`lane_width_m`, `dt_s`, ...).
//!
//! Sections may be left out to take their defaults; a section that is
//! present must be complete, and unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::PlantConfig;
use crate::env::EnvConfig;
use crate::train::TrainConfig;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    /// `host:port` the plant listens on and clients connect to.
    pub address: String,
    pub pose_wait_ms: u64,
    pub ack_wait_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { address: "127.0.0.1:47800".into(), pose_wait_ms: 200, ack_wait_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub scenarios: usize,
    pub episode_s: f64,
    /// Scenario seeds are drawn from a stream started here.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { scenarios: 20, episode_s: 120.0, seed: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub env: EnvConfig<f64>,
    pub train: TrainConfig<f64>,
    pub plant: PlantConfig,
    pub bridge: BridgeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            plant: PlantConfig::default(),
            bridge: BridgeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |section: &str, msg: String| Err(ConfigError::Invalid(format!("[{section}] {msg}")));
        if let Err(e) = self.env.validate() {
            return bad("env", e.to_string());
        }
        if let Err(e) = self.env.build_track() {
            return bad("env.track", e.to_string());
        }
        if let Err(e) = self.train.validate() {
            return bad("train", e.to_string());
        }
        if let Err(e) = self.plant.validate() {
            return bad("plant", e);
        }
        if self.bridge.address.is_empty() {
            return bad("bridge", "address must not be empty".into());
        }
        if !(self.eval.episode_s > 0.0 && self.eval.episode_s.is_finite()) {
            return bad("eval", format!("episode_s must be positive, got {}", self.eval.episode_s));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, hex encoded. The output directory
    /// does not affect results and is left out.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: PathBuf::new(), ..self.clone() }.to_toml();
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Provenance line embedded in every artifact.
    pub fn provenance(&self) -> String {
        format!("mixedlane {CODE_VERSION} config {}", self.hash())
    }

    /// Environment settings for fixed-length evaluation episodes: collisions
    /// are counted but do not end the episode.
    pub fn eval_env(&self) -> EnvConfig<f64> {
        EnvConfig { terminate_on_collision: false, max_episode_s: self.eval.episode_s, ..self.env }
    }

    /// Ticks in one evaluation episode.
    pub fn eval_ticks(&self) -> u64 {
        (self.eval.episode_s / self.env.dt_s).round() as u64
    }
}
