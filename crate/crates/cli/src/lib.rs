//! Command implementations behind the `mixedlane` binary: configuration
//! handling, the training and evaluation commands, CSV artifacts and the
//! space-time SVG plot.

pub mod artifacts;
pub mod commands;
pub mod plot;

use mixedlane::bridge::BridgeError;
use mixedlane::config::ConfigError;
use mixedlane::env::EnvError;
use mixedlane::net::NetError;
use mixedlane::train::TrainError;
use thiserror::Error;

pub use commands::PlantMode;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Bridge(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 when the plant
    /// cannot be reached, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Bridge(_) => 3,
            CliError::Input(_) | CliError::Run(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        CliError::Bridge(format!("plant unreachable: {e}"))
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Bridge(b) => b.into(),
            EnvError::Config(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BridgeTimeout { .. } => CliError::Bridge(e.to_string()),
            TrainError::Config(m) => CliError::Config(ConfigError::Invalid(m)),
            TrainError::Env(env) => env.into(),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Input(e.to_string())
    }
}
