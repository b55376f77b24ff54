//! Reinforcement-learning environment: scenario generation, the per-tick
//! simulation loop, observations, rewards and batching.

pub mod action;
pub mod observe;
pub mod scenario;
pub mod vec_env;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeError, BridgeSync, ExternalVehicle, PlantCommand, PlantPose};
use crate::control::{lane_change_complete, request_lane_change, steering_command, LaneChangeParams, LaneDirection, SpeedTracker, SteeringParams};
use crate::dynamics::{boxes_collide, detect_collisions, LaneChange, step_bicycle, vehicle_box, DynamicsError, Role, VehicleGeometry, VehicleState};
use crate::scalar::{wrap_angle, Real};
use crate::track::{OvalSpec, Projection, Track, TrackError};
use crate::traffic::{desired_gap, idm_acceleration, mobil_decision, IdmParams, LaneNeighbors, MobilChoice, MobilContext, MobilParams, Neighbor, TrafficError};

pub use action::{apply_action, AccelAction, ActionPair, LaneAction};
pub use observe::{observe, reward, Observation, RewardParams, NEIGHBOR_DIM, NEIGHBOR_SLOTS, SELF_DIM};
pub use scenario::randomize_scenario;
pub use vec_env::{SeedStream, VecEnv};

/// Index of the learning agent in every world.
pub const AGENT: usize = 0;

/// Broad-phase cell width (m) along the reference lane.
pub const COLLISION_CELL_M: f64 = 2.0;

/// Search window (m) for projections hinted by the previous arc position.
const TRACKING_WINDOW_M: f64 = 0.5;
/// Search window (m) for projections hinted from another lane.
const CROSS_LANE_WINDOW_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("batch of {envs} environments given {actions} actions")]
    BatchSize { envs: usize, actions: usize },
}

/// Reward coefficients `c0` (per m/s), `c1` and `c2` (unitless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights<T> {
    #[serde(rename = "c0_s_per_m")]
    pub c0: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Real> Default for RewardWeights<T> {
    fn default() -> Self {
        Self { c0: T::lit(0.06), c1: T::lit(0.833), c2: T::lit(2.81) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig<T> {
    pub track: OvalSpec,
    /// Moving vehicles including the agent.
    pub vehicles: usize,
    pub obstacles: usize,
    pub geometry: VehicleGeometry<T>,
    pub idm: IdmParams<T>,
    pub mobil: MobilParams<T>,
    pub steering: SteeringParams<T>,
    pub lane_change: LaneChangeParams<T>,
    pub reward: RewardWeights<T>,
    pub vision_radius_m: T,
    pub target_speed_min_mps: T,
    pub target_speed_max_mps: T,
    pub max_speed_mps: T,
    /// Agent acceleration per Accelerate/Decelerate decision.
    pub accel_step_mps2: T,
    /// Rate limit of the ideal speed tracker.
    pub speed_accel_limit_mps2: T,
    pub dt_s: T,
    pub lane_change_cooldown_s: T,
    /// Episodes end after this long even without a collision.
    pub max_episode_s: T,
    pub terminate_on_collision: bool,
}

impl<T: Real> Default for EnvConfig<T> {
    fn default() -> Self {
        Self {
            track: OvalSpec::default(),
            vehicles: 13,
            obstacles: 4,
            geometry: VehicleGeometry::default(),
            idm: IdmParams::default(),
            mobil: MobilParams::default(),
            steering: SteeringParams::default(),
            lane_change: LaneChangeParams::default(),
            reward: RewardWeights::default(),
            vision_radius_m: T::lit(2.0),
            target_speed_min_mps: T::lit(0.4),
            target_speed_max_mps: T::lit(1.2),
            max_speed_mps: T::lit(2.0),
            accel_step_mps2: T::lit(0.5),
            speed_accel_limit_mps2: T::lit(4.0),
            dt_s: T::lit(0.02),
            lane_change_cooldown_s: T::lit(1.0),
            max_episode_s: T::lit(60.0),
            terminate_on_collision: true,
        }
    }
}

impl<T: Real> EnvConfig<T> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        let pos = |v: T| v > T::zero() && v.is_finite();
        if self.vehicles == 0 {
            return bad("vehicles must include the agent (>= 1)".into());
        }
        if self.obstacles < self.track.lane_count {
            return bad(format!("obstacles ({}) must be at least the lane count ({})", self.obstacles, self.track.lane_count));
        }
        self.geometry.validate()?;
        self.idm.validate()?;
        self.mobil.validate()?;
        if !self.steering.is_valid() {
            return bad("steering gains must be positive".into());
        }
        for (name, v) in [
            ("vision_radius_m", self.vision_radius_m),
            ("target_speed_min_mps", self.target_speed_min_mps),
            ("max_speed_mps", self.max_speed_mps),
            ("accel_step_mps2", self.accel_step_mps2),
            ("speed_accel_limit_mps2", self.speed_accel_limit_mps2),
            ("dt_s", self.dt_s),
            ("max_episode_s", self.max_episode_s),
            ("reward.c0_s_per_m", self.reward.c0),
            ("reward.c1", self.reward.c1),
            ("reward.c2", self.reward.c2),
        ] {
            if !pos(v) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.target_speed_max_mps >= self.target_speed_min_mps) || self.target_speed_max_mps > self.max_speed_mps {
            return bad("target speed range must satisfy min <= max <= max_speed_mps".into());
        }
        if !(self.lane_change_cooldown_s >= T::zero()) {
            return bad("lane_change_cooldown_s must be >= 0".into());
        }
        Ok(())
    }

    pub fn reward_params(&self) -> RewardParams<T> {
        RewardParams {
            c0: self.reward.c0,
            c1: self.reward.c1,
            c2: self.reward.c2,
            vehicle_length: self.geometry.body_length,
            lane_separation: T::lit(self.track.lane_width_m),
        }
    }

    pub fn max_episode_ticks(&self) -> u64 {
        (self.max_episode_s / self.dt_s).round().to_u64().unwrap_or(u64::MAX).max(1)
    }

    pub fn build_track(&self) -> Result<Track<T>, EnvError> {
        Ok(Track::oval(&self.track)?)
    }
}

/// Full simulation state. Vehicle `AGENT` is the learner, followed by
/// background traffic, then obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct World<T> {
    pub vehicles: Vec<VehicleState<T>>,
    /// Projection of each vehicle onto its current lane.
    pub on_lane: Vec<Projection<T>>,
    /// Projection onto the destination lane during a lane change.
    pub on_target: Vec<Option<Projection<T>>>,
    /// Adjacent lane a vehicle's body protrudes into while not changing
    /// lanes, with the projection onto it.
    pub intrudes: Vec<Option<(usize, Projection<T>)>>,
    /// Remaining lane-change cooldown for background vehicles (s).
    pub cooldown: Vec<T>,
    pub tick: u64,
    pub seed: u64,
}

impl<T: Real> World<T> {
    /// A world at tick 0 with every vehicle projected onto its own lane.
    pub fn from_vehicles(vehicles: Vec<VehicleState<T>>, track: &Track<T>, seed: u64) -> Result<Self, TrackError> {
        let on_lane = vehicles.iter().map(|v| track.project(v.lane, v.position())).collect::<Result<Vec<_>, _>>()?;
        let n = vehicles.len();
        Ok(World { vehicles, on_lane, on_target: vec![None; n], intrudes: vec![None; n], cooldown: vec![T::zero(); n], tick: 0, seed })
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Speed along the current lane's tangent.
    pub fn lanewise_speed(&self, i: usize) -> T {
        let v = &self.vehicles[i];
        v.speed * (v.heading - self.on_lane[i].heading).cos()
    }

    /// Arc position of `i` mapped onto the reference lane, in `[0, L_ref)`.
    pub fn reference_arc(&self, i: usize, track: &Track<T>) -> T {
        let lane = &track.lanes()[self.vehicles[i].lane];
        let ref_len = track.lanes()[track.reference_lane()].total_length();
        let f = self.on_lane[i].s / lane.total_length();
        (f * ref_len).min(ref_len * (T::one() - T::epsilon()))
    }

    /// Arc position of `i` on `lane` if it occupies it (current lane or
    /// lane-change destination).
    pub fn position_on(&self, i: usize, lane: usize) -> Option<T> {
        let v = &self.vehicles[i];
        if v.lane == lane {
            Some(self.on_lane[i].s)
        } else if v.lane_change.target() == Some(lane) {
            self.on_target[i].map(|p| p.s)
        } else {
            self.intrudes[i].and_then(|(l, p)| (l == lane).then_some(p.s))
        }
    }
}

/// Hint for projecting a vehicle on `from` lane at `s` onto `to`.
fn cross_lane_hint<T: Real>(track: &Track<T>, from: usize, to: usize, s: T) -> T {
    let lanes = track.lanes();
    s / lanes[from].total_length() * lanes[to].total_length()
}

pub(crate) fn project_onto<T: Real>(track: &Track<T>, world: &World<T>, i: usize, lane: usize) -> Result<Projection<T>, TrackError> {
    let v = &world.vehicles[i];
    if lane == v.lane {
        track.project_near(lane, v.position(), world.on_lane[i].s, T::lit(TRACKING_WINDOW_M))
    } else {
        let hint = cross_lane_hint(track, v.lane, lane, world.on_lane[i].s);
        track.project_near(lane, v.position(), hint, T::lit(CROSS_LANE_WINDOW_M))
    }
}

/// Surroundings of vehicle `i` (at arc `s`) among the occupants of one lane.
#[derive(Clone, Copy)]
struct LaneView<T> {
    leader_id: Option<usize>,
    neighbors: LaneNeighbors<T>,
    leader_is_obstacle: bool,
    /// Some occupant overlaps `i` longitudinally (within `s0 + L`).
    blocked: bool,
}

/// Obstacles can lead but never follow.
fn lane_view<T: Real>(world: &World<T>, track: &Track<T>, i: usize, lane: usize, s: T, cfg: &EnvConfig<T>) -> LaneView<T> {
    let body_length = cfg.geometry.body_length;
    let clearance = body_length + cfg.idm.jam_distance;
    let len = track.lanes()[lane].total_length();
    let mut lead: Option<(T, usize)> = None;
    let mut follow: Option<(T, usize)> = None;
    let mut blocked = false;
    for k in 0..world.len() {
        if k == i {
            continue;
        }
        let Some(sk) = world.position_on(k, lane) else { continue };
        // a lane changer releases its old lane once it has moved clear of it
        if world.vehicles[k].lane == lane && front_corner_clear(&world.vehicles[k], &world.on_lane[k], cfg) {
            continue;
        }
        let mut ahead = (sk - s) % len;
        if ahead < T::zero() {
            ahead = ahead + len;
        }
        let behind = if ahead > T::zero() { len - ahead } else { T::zero() };
        if ahead.min(behind) < clearance {
            blocked = true;
        }
        if lead.is_none_or(|(d, _)| ahead < d) {
            lead = Some((ahead, k));
        }
        if world.vehicles[k].role == Role::Obstacle {
            continue;
        }
        if follow.is_none_or(|(d, _)| behind < d) {
            follow = Some((behind, k));
        }
    }
    let to_neighbor = |(d, k): (T, usize)| Neighbor {
        gap: d - body_length,
        speed: world.lanewise_speed(k),
        target_speed: world.vehicles[k].target_speed,
    };
    LaneView {
        neighbors: LaneNeighbors { leader: lead.map(to_neighbor), follower: follow.map(to_neighbor) },
        leader_id: lead.map(|(_, k)| k),
        leader_is_obstacle: lead.is_some_and(|(_, k)| world.vehicles[k].role == Role::Obstacle),
        blocked,
    }
}

fn buffered<T: Real>(view: LaneView<T>, buffer: T) -> LaneNeighbors<T> {
    let mut n = view.neighbors;
    if view.leader_is_obstacle {
        if let Some(l) = n.leader.as_mut() {
            l.gap = l.gap - buffer;
        }
    }
    n
}

/// Extra stopping distance background vehicles keep to a static obstacle so
/// that they can still steer around it.
fn obstacle_buffer<T: Real>(cfg: &EnvConfig<T>) -> T {
    cfg.geometry.body_length
}

/// Speed below which a background vehicle counts as stalled mid-change.
const STALL_SPEED_MPS: f64 = 0.02;

/// Speed and look-ahead (m) of a lane changer inching past its old-lane leader.
const CREEP_SPEED_MPS: f64 = 0.05;
const CREEP_LOOKAHEAD_M: f64 = 0.05;

/// Whether vehicle `i` moved `CREEP_LOOKAHEAD_M` along its heading stays clear of `leader`.
fn creep_is_clear<T: Real>(world: &World<T>, cfg: &EnvConfig<T>, i: usize, leader: Option<usize>) -> Result<bool, DynamicsError> {
    let Some(k) = leader else { return Ok(true) };
    let mut ahead = world.vehicles[i];
    ahead.x = ahead.x + T::lit(CREEP_LOOKAHEAD_M) * ahead.heading.cos();
    ahead.y = ahead.y + T::lit(CREEP_LOOKAHEAD_M) * ahead.heading.sin();
    Ok(!boxes_collide(&vehicle_box(&ahead, &cfg.geometry)?, &vehicle_box(&world.vehicles[k], &cfg.geometry)?))
}

struct BackgroundDecision<T> {
    vehicle: usize,
    direction: Option<LaneDirection>,
    abort: Abort,
    commanded: T,
}

#[derive(Clone, Copy)]
enum Abort {
    No,
    Cancel,
    Reverse,
}

/// Whether the front corner on the old-lane side of a lane-changing vehicle
/// has moved laterally past the half width of a vehicle centred in the old lane.
fn front_corner_clear<T: Real>(v: &VehicleState<T>, on_lane: &Projection<T>, cfg: &EnvConfig<T>) -> bool {
    let d = match v.lane_change {
        LaneChange::Left(_) => T::one(),
        LaneChange::Right(_) => -T::one(),
        LaneChange::None => return false,
    };
    let err = wrap_angle(v.heading - on_lane.heading);
    let half_w = cfg.geometry.body_width * T::lit(0.5);
    let corner = on_lane.offset + cfg.geometry.body_length * err.sin() - d * half_w * err.cos();
    d * corner > half_w
}

/// Adjacent lane that vehicle `i`'s body reaches into while it is not
/// changing lanes (a skewed or off-centre vehicle).
pub(crate) fn intrusion<T: Real>(track: &Track<T>, world: &World<T>, cfg: &EnvConfig<T>, i: usize) -> Result<Option<(usize, Projection<T>)>, TrackError> {
    let v = &world.vehicles[i];
    if v.role == Role::Obstacle || v.lane_change.is_active() {
        return Ok(None);
    }
    let p = &world.on_lane[i];
    let err = wrap_angle(v.heading - p.heading);
    let half_w = cfg.geometry.body_width * T::lit(0.5);
    let reach = cfg.geometry.body_length * err.sin();
    let spread = half_w * err.cos().abs();
    let left = p.offset + reach.max(T::zero()) + spread;
    let right = p.offset + reach.min(T::zero()) - spread;
    let limit = track.lane_width() - half_w;
    let lane = if left > limit && v.lane > 0 {
        v.lane - 1
    } else if -right > limit && v.lane + 1 < track.lane_count() {
        v.lane + 1
    } else {
        return Ok(None);
    };
    Ok(Some((lane, project_onto(track, world, i, lane)?)))
}

/// Per-tick outcome flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvents {
    /// Every overlapping pair this tick.
    pub collisions: Vec<(usize, usize)>,
    /// Pairs overlapping now that did not overlap on the previous tick.
    pub onsets: Vec<(usize, usize)>,
    pub agent_collision: bool,
    pub agent_collision_onset: bool,
    pub lap: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    /// Observation after the step, or the first observation of a fresh
    /// scenario when the batch auto-reset this environment.
    pub observation: Observation<T>,
    pub reward: T,
    pub done: bool,
    pub events: StepEvents,
    pub reset_seed: Option<u64>,
}

/// One vehicle at one tick, for space-time plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub vehicle_id: usize,
    pub role: Role,
    pub lane: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Position along the reference lane, in `[0, lap length)`.
    pub arc_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Collision,
    Lap,
    Reset,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Collision => "collision",
            EventKind::Lap => "lap",
            EventKind::Reset => "reset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRow {
    pub tick: u64,
    pub vehicle_id: usize,
    pub event: EventKind,
    pub x: f64,
    pub y: f64,
    pub other_id: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub trace: Vec<TraceRow>,
    pub events: Vec<EventRow>,
}

struct Bridged<T> {
    link: Box<dyn ExternalVehicle<T>>,
    sync: BridgeSync<T>,
}

/// A single-agent environment instance.
pub struct Env<T: Real> {
    config: Arc<EnvConfig<T>>,
    track: Arc<Track<T>>,
    world: World<T>,
    tracker: SpeedTracker<T>,
    prev_pairs: Vec<(usize, usize)>,
    bridged: Option<Bridged<T>>,
    recording: Option<Recording>,
}

impl<T: Real> Env<T> {
    pub fn new(config: Arc<EnvConfig<T>>, track: Arc<Track<T>>, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        let world = randomize_scenario(&config, &track, seed)?;
        let tracker = SpeedTracker::ideal(config.speed_accel_limit_mps2);
        Ok(Self { config, track, world, tracker, prev_pairs: Vec::new(), bridged: None, recording: None })
    }

    /// An environment starting from a hand-built world. Vehicle `AGENT` must
    /// be the agent. Resets still draw randomised scenarios.
    pub fn from_world(config: Arc<EnvConfig<T>>, track: Arc<Track<T>>, world: World<T>) -> Result<Self, EnvError> {
        config.validate()?;
        if world.vehicles.first().map(|v| v.role) != Some(Role::Agent) {
            return Err(EnvError::Config("vehicle 0 of a hand-built world must be the agent".into()));
        }
        let tracker = SpeedTracker::ideal(config.speed_accel_limit_mps2);
        Ok(Self { config, track, world, tracker, prev_pairs: Vec::new(), bridged: None, recording: None })
    }

    /// An environment whose agent is integrated by an external plant.
    pub fn with_external(
        config: Arc<EnvConfig<T>>,
        track: Arc<Track<T>>,
        seed: u64,
        link: Box<dyn ExternalVehicle<T>>,
    ) -> Result<Self, EnvError> {
        let mut env = Self::new(config, track, seed)?;
        env.bridged = Some(Bridged { link, sync: BridgeSync::default() });
        env.reset(seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig<T> {
        &self.config
    }

    pub fn track(&self) -> &Track<T> {
        &self.track
    }

    pub fn world(&self) -> &World<T> {
        &self.world
    }

    pub fn is_bridged(&self) -> bool {
        self.bridged.is_some()
    }

    /// Re-establishes a bridge link after a timeout.
    pub fn reconnect(&mut self) -> Result<(), EnvError> {
        if let Some(b) = self.bridged.as_mut() {
            b.link.reconnect()?;
        }
        Ok(())
    }

    /// Starts or stops recording trace and event rows.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = if on { Some(Recording::default()) } else { None };
        if on {
            self.record_states();
        }
    }

    pub fn take_recording(&mut self) -> Option<Recording> {
        self.recording.as_mut().map(std::mem::take)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation<T>, EnvError> {
        self.world = randomize_scenario(&self.config, &self.track, seed)?;
        self.prev_pairs.clear();
        if let Some(b) = self.bridged.as_mut() {
            let v = &mut self.world.vehicles[AGENT];
            v.role = Role::BridgedPlant;
            let pose = PlantPose { x: v.x, y: v.y, heading: v.heading, speed: v.speed };
            b.link.reset(AGENT as u32, pose)?;
            b.sync = BridgeSync::new(pose);
        }
        if let Some(rec) = self.recording.as_mut() {
            let v = &self.world.vehicles[AGENT];
            rec.events.push(EventRow {
                tick: 0,
                vehicle_id: AGENT,
                event: EventKind::Reset,
                x: v.x.as_f64(),
                y: v.y.as_f64(),
                other_id: None,
            });
            self.record_states();
        }
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation<T> {
        observe(&self.world, &self.track, &self.config, AGENT)
    }

    fn record_states(&mut self) {
        let Some(rec) = self.recording.as_mut() else { return };
        for (i, v) in self.world.vehicles.iter().enumerate() {
            rec.trace.push(TraceRow {
                tick: self.world.tick,
                vehicle_id: i,
                role: v.role,
                lane: v.lane,
                x: v.x.as_f64(),
                y: v.y.as_f64(),
                heading: v.heading.as_f64(),
                speed: v.speed.as_f64(),
                arc_m: self.world.reference_arc(i, &self.track).as_f64(),
            });
        }
    }

    /// Background driver decisions from the start-of-tick state.
    fn background_decisions(&self) -> Result<Vec<BackgroundDecision<T>>, EnvError> {
        let cfg = &*self.config;
        let w = &self.world;
        let track = &*self.track;
        let m = track.lane_count();
        let buffer = obstacle_buffer(cfg);
        let mut out = Vec::new();
        for i in 0..w.len() {
            let v = &w.vehicles[i];
            if v.role != Role::Background {
                continue;
            }
            let current = lane_view(w, track, i, v.lane, w.on_lane[i].s, cfg);
            let current_n = buffered(current, buffer);
            let mut direction = None;
            if !v.lane_change.is_active() && w.cooldown[i] <= T::zero() {
                let side = |lane: Option<usize>| -> Result<Option<LaneNeighbors<T>>, EnvError> {
                    let Some(l) = lane else { return Ok(None) };
                    let p = project_onto(track, w, i, l)?;
                    let view = lane_view(w, track, i, l, p.s, cfg);
                    let n = buffered(view, buffer);
                    let too_close = n.leader.is_some_and(|ld| ld.gap < desired_gap(v.speed, v.speed - ld.speed, &cfg.idm));
                    Ok((!view.blocked && !too_close).then_some(n))
                };
                let left = side(v.lane.checked_sub(1))?;
                let right = side((v.lane + 1 < m).then_some(v.lane + 1))?;
                let ctx = MobilContext {
                    speed: w.lanewise_speed(i),
                    target_speed: v.target_speed,
                    body_length: cfg.geometry.body_length,
                    current: current_n,
                    left,
                    right,
                };
                direction = match mobil_decision(&ctx, &cfg.mobil, &cfg.idm)? {
                    MobilChoice::Left => Some(LaneDirection::Left),
                    MobilChoice::Right => Some(LaneDirection::Right),
                    MobilChoice::None => None,
                };
            }
            let speed = v.speed;
            let follow = |n: &LaneNeighbors<T>| -> Result<T, TrafficError> {
                match n.leader {
                    Some(l) => idm_acceleration(speed, v.target_speed, l.gap, speed - l.speed, &cfg.idm),
                    None => idm_acceleration(speed, v.target_speed, T::infinity(), T::zero(), &cfg.idm),
                }
            };
            let mut abort = Abort::No;
            let accel = match (v.lane_change.target(), w.on_target[i]) {
                (Some(t), Some(p)) => {
                    let dest = follow(&buffered(lane_view(w, track, i, t, p.s, cfg), buffer))?;
                    let stay = follow(&current_n)?;
                    let clear = front_corner_clear(v, &w.on_lane[i], cfg);
                    let stalled = speed < T::lit(STALL_SPEED_MPS) && dest <= T::zero() && stay > T::zero();
                    if stalled && clear {
                        // destination blocked after leaving the old lane: steer back into it
                        abort = Abort::Reverse;
                        stay
                    } else if stalled && w.on_lane[i].offset.abs() < cfg.geometry.body_width * T::lit(0.5) {
                        // destination blocked before the body left its lane: give up the change
                        abort = Abort::Cancel;
                        stay
                    } else if clear {
                        dest
                    } else {
                        let mut old = follow(&current.neighbors)?;
                        if dest > T::zero() && creep_is_clear(w, cfg, i, current.leader_id)? {
                            // inch forward so the change can make lateral progress
                            old = old.max(idm_acceleration(speed, T::lit(CREEP_SPEED_MPS), T::infinity(), T::zero(), &cfg.idm)?);
                        }
                        old.min(dest)
                    }
                }
                _ => follow(&current_n)?,
            };
            let commanded = (speed + accel * cfg.dt_s).clamp_to(T::zero(), cfg.max_speed_mps);
            out.push(BackgroundDecision { vehicle: i, direction, abort, commanded });
        }
        Ok(out)
    }

    /// Advances one tick with the agent taking `action`.
    pub fn step(&mut self, action: ActionPair) -> Result<StepResult<T>, EnvError> {
        let cfg = Arc::clone(&self.config);
        let track = Arc::clone(&self.track);
        let dt = cfg.dt_s;
        let lap_fraction_before = self.world.on_lane[AGENT].s / track.lanes()[self.world.vehicles[AGENT].lane].total_length();

        apply_action(&mut self.world, &track, &cfg, AGENT, action)?;

        let decisions = self.background_decisions()?;
        for BackgroundDecision { vehicle: i, direction, abort, commanded } in decisions {
            let w = &mut self.world;
            w.cooldown[i] = (w.cooldown[i] - dt).max(T::zero());
            match abort {
                Abort::No => {}
                Abort::Cancel => {
                    w.vehicles[i].lane_change = LaneChange::None;
                    w.on_target[i] = None;
                    w.cooldown[i] = cfg.lane_change_cooldown_s;
                }
                Abort::Reverse => {
                    let v = &mut w.vehicles[i];
                    let (Some(target), Some(p)) = (v.lane_change.target(), w.on_target[i]) else { unreachable!("reverse without a change") };
                    let origin = v.lane;
                    v.lane_change = if matches!(v.lane_change, LaneChange::Left(_)) { LaneChange::Right(origin) } else { LaneChange::Left(origin) };
                    v.lane = target;
                    w.on_target[i] = Some(w.on_lane[i]);
                    w.on_lane[i] = p;
                    w.cooldown[i] = cfg.lane_change_cooldown_s;
                }
            }
            if let Some(d) = direction {
                if request_lane_change(&mut w.vehicles[i], d, track.lane_count()) {
                    let target = w.vehicles[i].lane_change.target().expect("change just requested");
                    w.on_target[i] = Some(project_onto(&track, w, i, target)?);
                    w.cooldown[i] = cfg.lane_change_cooldown_s;
                }
            }
            w.vehicles[i].commanded_speed = commanded;
        }

        // speed tracking
        for v in self.world.vehicles.iter_mut() {
            if matches!(v.role, Role::Agent | Role::Background) {
                v.speed = self.tracker.track(v.speed, v.commanded_speed, dt).max(T::zero());
            }
        }

        // lane bookkeeping and steering
        let lane_width = track.lane_width();
        let mut steering = vec![T::zero(); self.world.len()];
        for (i, steer) in steering.iter_mut().enumerate() {
            let w = &mut self.world;
            if w.vehicles[i].role == Role::Obstacle {
                continue;
            }
            if let Some(p) = w.on_target[i] {
                let err = wrap_angle(w.vehicles[i].heading - p.heading);
                if lane_change_complete(&mut w.vehicles[i], p.offset, err, lane_width, &cfg.lane_change) {
                    w.on_lane[i] = p;
                    w.on_target[i] = None;
                }
            }
            let p = w.on_target[i].unwrap_or(w.on_lane[i]);
            let err = wrap_angle(w.vehicles[i].heading - p.heading);
            *steer = steering_command(p.offset, err, p.curvature, &cfg.steering).angle;
        }

        // integration
        let wheel_base = cfg.geometry.wheel_base;
        for (i, &steer) in steering.iter().enumerate() {
            let v = self.world.vehicles[i];
            match v.role {
                Role::Obstacle => {}
                Role::Agent | Role::Background => {
                    self.world.vehicles[i] = step_bicycle(&v, steer, dt, wheel_base);
                }
                Role::BridgedPlant => {
                    let b = self.bridged.as_mut().ok_or(BridgeError::Disconnected)?;
                    let cmd = PlantCommand { steering: steer, target_speed: v.commanded_speed };
                    let fresh = b.link.exchange(self.world.tick, cmd)?;
                    let pose = b.sync.update(fresh, dt)?;
                    let s = &mut self.world.vehicles[i];
                    s.x = pose.x;
                    s.y = pose.y;
                    s.heading = pose.heading;
                    s.speed = pose.speed;
                }
            }
        }

        // re-projection
        for i in 0..self.world.len() {
            let w = &self.world;
            if w.vehicles[i].role == Role::Obstacle {
                continue;
            }
            let lane = w.vehicles[i].lane;
            let p = project_onto(&track, w, i, lane)?;
            let t = match w.vehicles[i].lane_change.target() {
                Some(target) => {
                    let hint = w.on_target[i].map_or_else(|| cross_lane_hint(&track, lane, target, p.s), |q| q.s);
                    Some(track.project_near(target, w.vehicles[i].position(), hint, T::lit(TRACKING_WINDOW_M))?)
                }
                None => None,
            };
            self.world.on_lane[i] = p;
            self.world.on_target[i] = t;
        }
        for i in 0..self.world.len() {
            self.world.intrudes[i] = intrusion(&track, &self.world, &cfg, i)?;
        }
        self.world.tick += 1;

        let events = self.collisions(lap_fraction_before)?;
        let reward = reward(&self.world, AGENT, &cfg.reward_params());
        let done = (events.agent_collision && cfg.terminate_on_collision) || self.world.tick >= cfg.max_episode_ticks();
        self.record_step(&events);
        Ok(StepResult { observation: self.observe(), reward, done, events, reset_seed: None })
    }

    fn collisions(&mut self, lap_fraction_before: T) -> Result<StepEvents, EnvError> {
        let track = &*self.track;
        let w = &self.world;
        let boxes = w.vehicles.iter().map(|v| vehicle_box(v, &self.config.geometry)).collect::<Result<Vec<_>, _>>()?;
        let keys: Vec<T> = (0..w.len()).map(|i| w.reference_arc(i, track)).collect();
        let period = track.lanes()[track.reference_lane()].total_length();
        let pairs = detect_collisions(&boxes, &keys, period, T::lit(COLLISION_CELL_M));
        let onsets: Vec<(usize, usize)> = pairs.iter().copied().filter(|p| self.prev_pairs.binary_search(p).is_err()).collect();
        let agent_collision = pairs.iter().any(|&(a, _)| a == AGENT);
        let agent_collision_onset = onsets.iter().any(|&(a, _)| a == AGENT);
        let frac = w.on_lane[AGENT].s / track.lanes()[w.vehicles[AGENT].lane].total_length();
        let lap = lap_fraction_before - frac > T::lit(0.5);
        self.prev_pairs = pairs.clone();
        Ok(StepEvents { collisions: pairs, onsets, agent_collision, agent_collision_onset, lap })
    }

    fn record_step(&mut self, events: &StepEvents) {
        if self.recording.is_none() {
            return;
        }
        let tick = self.world.tick;
        let mut rows = Vec::new();
        for &(a, b) in &events.onsets {
            let (va, vb) = (&self.world.vehicles[a], &self.world.vehicles[b]);
            rows.push(EventRow {
                tick,
                vehicle_id: a,
                event: EventKind::Collision,
                x: ((va.x + vb.x) * T::lit(0.5)).as_f64(),
                y: ((va.y + vb.y) * T::lit(0.5)).as_f64(),
                other_id: Some(b),
            });
        }
        if events.lap {
            let v = &self.world.vehicles[AGENT];
            rows.push(EventRow { tick, vehicle_id: AGENT, event: EventKind::Lap, x: v.x.as_f64(), y: v.y.as_f64(), other_id: None });
        }
        if let Some(rec) = self.recording.as_mut() {
            rec.events.extend(rows);
        }
        self.record_states();
    }
}
