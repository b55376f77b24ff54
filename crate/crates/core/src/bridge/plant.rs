//! Perturbed-dynamics plant standing in for the physical vehicle.

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::protocol::{Message, PoseMessage};
use super::{PlantCommand, PlantPose};
use crate::control::{SpeedMode, SpeedTracker};
use crate::dynamics::{step_bicycle, Role, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub actuation_delay_ticks: u32,
    /// First-order velocity lag time constant; 0 disables the lag.
    pub velocity_lag_s: f64,
    /// Relative wheelbase error, e.g. 0.1 for a 10% longer wheelbase.
    pub wheelbase_error: f64,
    pub steering_bias_rad: f64,
    /// Standard deviation of Gaussian noise on reported positions.
    pub position_noise_m: f64,
    pub speed_mode: SpeedMode<f64>,
    pub pid_integral_limit: f64,
    pub noise_seed: u64,
}

impl PlantConfig {
    /// No perturbation: reproduces the simulated vehicle exactly.
    pub fn ideal() -> Self {
        Self {
            actuation_delay_ticks: 0,
            velocity_lag_s: 0.0,
            wheelbase_error: 0.0,
            steering_bias_rad: 0.0,
            position_noise_m: 0.0,
            speed_mode: SpeedMode::Ideal,
            pid_integral_limit: 1.0,
            noise_seed: 0,
        }
    }

    /// Sluggish preset used for adaptation experiments.
    pub fn deepracer_like() -> Self {
        Self {
            actuation_delay_ticks: 2,
            velocity_lag_s: 0.3,
            wheelbase_error: 0.1,
            steering_bias_rad: 0.02,
            position_noise_m: 0.0,
            speed_mode: SpeedMode::Pid { kp: 2.0, ki: 0.5, kd: 0.0 },
            pid_integral_limit: 1.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.velocity_lag_s, self.wheelbase_error, self.steering_bias_rad, self.position_noise_m, self.pid_integral_limit];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("plant parameters must be finite".into());
        }
        if self.velocity_lag_s < 0.0 {
            return Err(format!("velocity_lag_s must be >= 0, got {}", self.velocity_lag_s));
        }
        if self.wheelbase_error <= -1.0 {
            return Err(format!("wheelbase_error must be > -1, got {}", self.wheelbase_error));
        }
        if self.position_noise_m < 0.0 {
            return Err(format!("position_noise_m must be >= 0, got {}", self.position_noise_m));
        }
        Ok(())
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::deepracer_like()
    }
}

/// `v + (dt / tau) (target - v)`, or `target` when `tau` is zero.
pub fn first_order_lag(v: f64, target: f64, dt: f64, tau: f64) -> f64 {
    if tau > 0.0 {
        v + (dt / tau).min(1.0) * (target - v)
    } else {
        target
    }
}

#[derive(Debug, Clone)]
pub struct PlantState {
    config: PlantConfig,
    wheel_base: f64,
    accel_limit: f64,
    state: VehicleState<f64>,
    queue: VecDeque<PlantCommand<f64>>,
    held: PlantCommand<f64>,
    tracker: SpeedTracker<f64>,
    rng: ChaCha8Rng,
}

impl PlantState {
    pub fn new(config: PlantConfig, wheel_base: f64, accel_limit: f64, pose: PlantPose<f64>) -> Self {
        let tracker = match config.speed_mode {
            SpeedMode::Ideal => SpeedTracker::ideal(accel_limit),
            SpeedMode::Pid { kp, ki, kd } => SpeedTracker::pid(kp, ki, kd, accel_limit, config.pid_integral_limit),
        };
        let mut plant = Self {
            config,
            wheel_base,
            accel_limit,
            state: VehicleState::at_rest(0.0, 0.0, 0.0, 0, Role::BridgedPlant),
            queue: VecDeque::new(),
            held: PlantCommand { steering: 0.0, target_speed: 0.0 },
            tracker,
            rng: ChaCha8Rng::seed_from_u64(config.noise_seed),
        };
        plant.reset(pose);
        plant
    }

    /// Teleports the plant and clears actuator memory.
    pub fn reset(&mut self, pose: PlantPose<f64>) {
        self.state.x = pose.x;
        self.state.y = pose.y;
        self.state.heading = pose.heading;
        self.state.speed = pose.speed;
        self.queue.clear();
        self.held = PlantCommand { steering: 0.0, target_speed: pose.speed };
        self.tracker.reset();
    }

    pub fn true_pose(&self) -> PlantPose<f64> {
        PlantPose { x: self.state.x, y: self.state.y, heading: self.state.heading, speed: self.state.speed }
    }

    /// Advances one tick and returns the reported pose.
    pub fn step(&mut self, command: PlantCommand<f64>, dt: f64) -> PlantPose<f64> {
        self.queue.push_back(command);
        if self.queue.len() > self.config.actuation_delay_ticks as usize {
            if let Some(c) = self.queue.pop_front() {
                self.held = c;
            }
        }
        let cmd = self.held;
        let v = self.state.speed;
        let out = self.tracker.track(v, cmd.target_speed, dt);
        let next_speed = match self.config.speed_mode {
            SpeedMode::Ideal => first_order_lag(v, out, dt, self.config.velocity_lag_s),
            SpeedMode::Pid { .. } => {
                let lagged = first_order_lag(v, (v + out).max(0.0), dt, self.config.velocity_lag_s);
                let step = self.accel_limit * dt;
                v + (lagged - v).clamp(-step, step)
            }
        };
        self.state.speed = next_speed.max(0.0);
        let steering = cmd.steering + self.config.steering_bias_rad;
        let wheel_base = self.wheel_base * (1.0 + self.config.wheelbase_error);
        self.state = step_bicycle(&self.state, steering, dt, wheel_base);
        let mut pose = self.true_pose();
        if self.config.position_noise_m > 0.0 {
            let n = Normal::new(0.0, self.config.position_noise_m).expect("validated noise");
            pose.x += n.sample(&mut self.rng);
            pose.y += n.sample(&mut self.rng);
        }
        pose
    }
}

/// Free function form of [`PlantState::step`].
pub fn plant_step(plant: &mut PlantState, command: PlantCommand<f64>, dt: f64) -> PlantPose<f64> {
    plant.step(command, dt)
}

/// Message-level plant: a pose message teleports (and is echoed as an
/// acknowledgement), a command steps the plant and is answered with the pose
/// stamped one tick later.
#[derive(Debug, Clone)]
pub struct PlantServer {
    config: PlantConfig,
    wheel_base: f64,
    accel_limit: f64,
    dt: f64,
    plants: HashMap<u32, PlantState>,
}

impl PlantServer {
    pub fn new(config: PlantConfig, wheel_base: f64, accel_limit: f64, dt: f64) -> Self {
        Self { config, wheel_base, accel_limit, dt, plants: HashMap::new() }
    }

    pub fn plant(&self, vehicle_id: u32) -> Option<&PlantState> {
        self.plants.get(&vehicle_id)
    }

    pub fn handle(&mut self, msg: &Message) -> Option<PoseMessage> {
        match *msg {
            Message::Pose(p) => {
                let pose = PlantPose { x: p.x, y: p.y, heading: p.heading, speed: p.speed };
                let (cfg, wb, acc) = (self.config, self.wheel_base, self.accel_limit);
                self.plants
                    .entry(p.vehicle_id)
                    .and_modify(|s| s.reset(pose))
                    .or_insert_with(|| PlantState::new(cfg, wb, acc, pose));
                Some(p)
            }
            Message::Command(c) => {
                let dt = self.dt;
                let plant = self.plants.get_mut(&c.vehicle_id)?;
                let pose = plant.step(PlantCommand { steering: c.steering, target_speed: c.target_speed }, dt);
                Some(PoseMessage {
                    vehicle_id: c.vehicle_id,
                    timestamp_us: c.timestamp_us + (dt * 1e6).round() as u64,
                    x: pose.x,
                    y: pose.y,
                    heading: pose.heading,
                    speed: pose.speed,
                })
            }
        }
    }

    /// Decodes, handles and encodes one datagram. Malformed frames are dropped.
    pub fn handle_bytes(&mut self, buf: &[u8]) -> Option<Vec<u8>> {
        match Message::decode(buf) {
            Ok(m) => self.handle(&m).map(|p| p.encode().to_vec()),
            Err(e) => {
                log::warn!("plant dropped datagram: {e}");
                None
            }
        }
    }
}
