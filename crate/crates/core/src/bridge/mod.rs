//! Mixed-reality bridge: the datagram protocol, a perturbed-dynamics plant
//! standing in for the physical vehicle, transports, and the pose
//! synchronisation used by the environment.

pub mod plant;
pub mod protocol;
pub mod transport;

use thiserror::Error;

use crate::scalar::Real;

pub use plant::{plant_step, PlantConfig, PlantServer, PlantState};
pub use protocol::{CommandMessage, Message, PoseMessage, ProtocolError};
pub use transport::{InProcessPlant, PlantThread, RemotePlant};

/// Consecutive ticks without a fresh pose tolerated before timing out.
pub const MAX_STALE_TICKS: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("no fresh pose for {stale_ticks} ticks")]
    Timeout { stale_ticks: u32 },
    #[error("plant did not acknowledge reset")]
    NoAck,
    #[error("bridge transport closed")]
    Disconnected,
    #[error("bridge i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl From<std::io::Error> for BridgeError {
    fn from(e: std::io::Error) -> Self {
        BridgeError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantPose<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
    pub speed: T,
}

/// Low-level command for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantCommand<T> {
    pub steering: T,
    pub target_speed: T,
}

/// A vehicle whose dynamics are integrated outside the simulation.
pub trait ExternalVehicle<T>: Send {
    /// Places the plant at `pose` (scenario start). Blocks until acknowledged.
    fn reset(&mut self, vehicle_id: u32, pose: PlantPose<T>) -> Result<(), BridgeError>;

    /// Sends the command for `tick` and returns the pose after the plant's
    /// step, or `None` if it did not arrive in time.
    fn exchange(&mut self, tick: u64, command: PlantCommand<T>) -> Result<Option<PlantPose<T>>, BridgeError>;

    /// Re-establishes the link after a timeout.
    fn reconnect(&mut self) -> Result<(), BridgeError> {
        Ok(())
    }
}

/// Holds the newest pose; extrapolates through short gaps and times out
/// after [`MAX_STALE_TICKS`].
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSync<T> {
    last: Option<PlantPose<T>>,
    stale: u32,
    max_stale: u32,
}

impl<T: Real> Default for BridgeSync<T> {
    fn default() -> Self {
        Self { last: None, stale: 0, max_stale: MAX_STALE_TICKS }
    }
}

impl<T: Real> BridgeSync<T> {
    pub fn new(initial: PlantPose<T>) -> Self {
        Self { last: Some(initial), ..Self::default() }
    }

    pub fn stale_ticks(&self) -> u32 {
        self.stale
    }

    pub fn update(&mut self, fresh: Option<PlantPose<T>>, dt: T) -> Result<PlantPose<T>, BridgeError> {
        if let Some(p) = fresh {
            self.last = Some(p);
            self.stale = 0;
            return Ok(p);
        }
        self.stale += 1;
        let last = self.last.ok_or(BridgeError::Timeout { stale_ticks: self.stale })?;
        if self.stale > self.max_stale {
            return Err(BridgeError::Timeout { stale_ticks: self.stale });
        }
        let moved = PlantPose {
            x: last.x + last.speed * dt * last.heading.cos(),
            y: last.y + last.speed * dt * last.heading.sin(),
            ..last
        };
        self.last = Some(moved);
        Ok(moved)
    }
}

/// Microsecond timestamp of `tick`.
pub fn tick_timestamp_us(tick: u64, dt: f64) -> u64 {
    (tick as f64 * dt * 1e6).round() as u64
}
