//! Multi-lane traffic microsimulation on an oval track with a learned
//! high-level driver, asynchronous actor-critic training and a datagram
//! bridge to an external vehicle plant.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
pub mod scalar;
pub mod track;
pub mod dynamics;
pub mod control;
pub mod traffic;
pub mod bridge;
pub mod env;
pub mod net;
pub mod train;
pub mod config;

pub use scalar::Real;

/// Double-precision aliases for the common entry points.
pub type Track = track::Track<f64>;
pub type Env = env::Env<f64>;
pub type EnvConfig = env::EnvConfig<f64>;
pub type TrainConfig = train::TrainConfig<f64>;
pub type NetworkParams = net::NetworkParams<f64>;
pub type Checkpoint = net::checkpoint::Checkpoint<f64>;
pub type PlantConfig = bridge::PlantConfig;
pub use config::RunConfig;
