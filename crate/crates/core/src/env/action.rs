//! The agent's discrete action pair and its application.

use super::{project_onto, EnvConfig, EnvError, World};
use crate::control::{request_lane_change, LaneDirection};
use crate::scalar::Real;
use crate::track::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccelAction {
    Decelerate,
    Hold,
    Accelerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneAction {
    Left,
    Keep,
    Right,
}

impl AccelAction {
    pub const ALL: [AccelAction; 3] = [AccelAction::Decelerate, AccelAction::Hold, AccelAction::Accelerate];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn sign(self) -> f64 {
        match self {
            AccelAction::Decelerate => -1.0,
            AccelAction::Hold => 0.0,
            AccelAction::Accelerate => 1.0,
        }
    }
}

impl LaneAction {
    pub const ALL: [LaneAction; 3] = [LaneAction::Left, LaneAction::Keep, LaneAction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionPair {
    pub lane: LaneAction,
    pub accel: AccelAction,
}

impl ActionPair {
    pub const NOOP: ActionPair = ActionPair { lane: LaneAction::Keep, accel: AccelAction::Hold };

    pub fn new(lane: LaneAction, accel: AccelAction) -> Self {
        Self { lane, accel }
    }
}

impl Default for ActionPair {
    fn default() -> Self {
        Self::NOOP
    }
}

/// Adjusts the commanded speed by one acceleration step and requests a lane
/// change if asked (a no-op without a lane on that side or mid-change).
/// Returns whether a lane change started.
pub fn apply_action<T: Real>(
    world: &mut World<T>,
    track: &Track<T>,
    config: &EnvConfig<T>,
    vehicle: usize,
    action: ActionPair,
) -> Result<bool, EnvError> {
    let v = &mut world.vehicles[vehicle];
    let delta = T::lit(action.accel.sign()) * config.accel_step_mps2 * config.dt_s;
    v.commanded_speed = (v.commanded_speed + delta).clamp_to(T::zero(), config.max_speed_mps);
    let direction = match action.lane {
        LaneAction::Keep => return Ok(false),
        LaneAction::Left => LaneDirection::Left,
        LaneAction::Right => LaneDirection::Right,
    };
    if !request_lane_change(v, direction, track.lane_count()) {
        return Ok(false);
    }
    let target = v.lane_change.target().expect("change just requested");
    world.on_target[vehicle] = Some(project_onto(track, world, vehicle, target)?);
    Ok(true)
}
