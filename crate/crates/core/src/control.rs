//! Low-level control: lane-following steering law, speed tracking and
//! lane-change execution.

use serde::{Deserialize, Serialize};

use crate::dynamics::{LaneChange, VehicleState};
use crate::scalar::{wrap_angle, Real};
use crate::track::{Track, TrackError};

/// Value `tan(psi)` saturates at when the heading error reaches +-pi/2.
pub const TAN_SATURATION: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringParams<T> {
    /// Offset gain `g` (1/m).
    #[serde(rename = "gain_per_m")]
    pub gain: T,
    /// Heading damping `d` (m).
    #[serde(rename = "damping_m")]
    pub damping: T,
    /// Curvature feedforward coefficient `l` (m).
    #[serde(rename = "feedforward_m")]
    pub feedforward: T,
    /// Steering limit (rad).
    #[serde(rename = "max_steer_rad")]
    pub max_steer: T,
}

impl<T: Real> SteeringParams<T> {
    pub fn is_valid(&self) -> bool {
        self.gain > T::zero() && self.damping > T::zero() && self.feedforward >= T::zero() && self.max_steer > T::zero()
    }
}

impl<T: Real> Default for SteeringParams<T> {
    fn default() -> Self {
        Self { gain: T::lit(3.0), damping: T::lit(0.4), feedforward: T::lit(0.16), max_steer: T::lit(0.6) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringCommand<T> {
    pub angle: T,
    /// Set when the heading error was at or past +-pi/2 and tan was saturated.
    pub saturated: bool,
}

/// `phi = clamp(-g*delta - g*d*tan(psi_rel) + l*kappa, +-phi_max)`.
pub fn steering_command<T: Real>(offset: T, heading_error: T, curvature: T, params: &SteeringParams<T>) -> SteeringCommand<T> {
    let half_pi = T::FRAC_PI_2();
    let sat = T::lit(TAN_SATURATION);
    let (tan, saturated) = if heading_error.abs() >= half_pi {
        (sat.copysign(heading_error), true)
    } else {
        (heading_error.tan().clamp_to(-sat, sat), false)
    };
    let raw = -params.gain * offset - params.gain * params.damping * tan + params.feedforward * curvature;
    SteeringCommand { angle: raw.clamp_to(-params.max_steer, params.max_steer), saturated }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedMode<T> {
    Ideal,
    Pid { kp: T, ki: T, kd: T },
}

/// Longitudinal tracker. `Ideal` returns the next speed, `Pid` a throttle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedTracker<T> {
    pub mode: SpeedMode<T>,
    pub accel_limit: T,
    /// Anti-windup bound on the integral state.
    pub integral_limit: T,
    integral: T,
    prev_error: Option<T>,
}

impl<T: Real> SpeedTracker<T> {
    pub fn ideal(accel_limit: T) -> Self {
        Self { mode: SpeedMode::Ideal, accel_limit, integral_limit: T::one(), integral: T::zero(), prev_error: None }
    }

    pub fn pid(kp: T, ki: T, kd: T, accel_limit: T, integral_limit: T) -> Self {
        Self { mode: SpeedMode::Pid { kp, ki, kd }, accel_limit, integral_limit, integral: T::zero(), prev_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = T::zero();
        self.prev_error = None;
    }

    pub fn integral(&self) -> T {
        self.integral
    }

    pub fn track(&mut self, current: T, commanded: T, dt: T) -> T {
        match self.mode {
            SpeedMode::Ideal => {
                let step = self.accel_limit * dt;
                current + (commanded - current).clamp_to(-step, step)
            }
            SpeedMode::Pid { kp, ki, kd } => {
                let e = commanded - current;
                self.integral = (self.integral + e * dt).clamp_to(-self.integral_limit, self.integral_limit);
                let de = self.prev_error.map_or(T::zero(), |p| (e - p) / dt);
                self.prev_error = Some(e);
                kp * e + ki * self.integral + kd * de
            }
        }
    }
}

/// Free function form of [`SpeedTracker::track`].
pub fn track_speed<T: Real>(tracker: &mut SpeedTracker<T>, current: T, commanded: T, dt: T) -> T {
    tracker.track(current, commanded, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneDirection {
    Left,
    Right,
}

/// Lane-change completion thresholds, as a fraction of the lane width and in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeParams<T> {
    pub offset_fraction: T,
    #[serde(rename = "heading_tolerance_rad")]
    pub heading_tolerance: T,
}

impl<T: Real> Default for LaneChangeParams<T> {
    fn default() -> Self {
        Self { offset_fraction: T::lit(0.05), heading_tolerance: T::lit(0.1) }
    }
}

/// Starts a change toward an adjacent lane. A no-op while a change is active
/// or when no lane exists on that side; returns whether a change started.
pub fn request_lane_change<T: Real>(state: &mut VehicleState<T>, direction: LaneDirection, lane_count: usize) -> bool {
    if state.lane_change.is_active() {
        return false;
    }
    state.lane_change = match direction {
        LaneDirection::Left if state.lane > 0 => LaneChange::Left(state.lane - 1),
        LaneDirection::Right if state.lane + 1 < lane_count => LaneChange::Right(state.lane + 1),
        _ => return false,
    };
    true
}

/// Completes an active change once the vehicle sits on the destination
/// centreline (offset and heading within tolerance). `offset` and
/// `heading_error` are measured against the destination lane.
pub fn lane_change_complete<T: Real>(
    state: &mut VehicleState<T>,
    offset: T,
    heading_error: T,
    lane_width: T,
    params: &LaneChangeParams<T>,
) -> bool {
    let Some(target) = state.lane_change.target() else {
        return false;
    };
    if offset.abs() < params.offset_fraction * lane_width && heading_error.abs() < params.heading_tolerance {
        state.lane = target;
        state.lane_change = LaneChange::None;
        true
    } else {
        false
    }
}

/// Projects onto the destination lane and applies [`lane_change_complete`].
/// Out-of-range destinations cancel the change.
pub fn lane_change_update<T: Real>(
    state: &VehicleState<T>,
    track: &Track<T>,
    params: &LaneChangeParams<T>,
) -> Result<VehicleState<T>, TrackError> {
    let mut next = *state;
    let Some(target) = state.lane_change.target() else {
        return Ok(next);
    };
    if target >= track.lane_count() || target.abs_diff(state.lane) != 1 {
        next.lane_change = LaneChange::None;
        return Ok(next);
    }
    let p = track.project(target, state.position())?;
    let err = wrap_angle(state.heading - p.heading);
    lane_change_complete(&mut next, p.offset, err, track.lane_width(), params);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_bicycle, Role};
    use crate::track::OvalSpec;

    fn params() -> SteeringParams<f64> {
        SteeringParams::default()
    }

    #[test]
    fn steering_examples() {
        assert_eq!(steering_command(0.0, 0.0, 0.0, &params()).angle, 0.0);
        let c = steering_command(0.1, 0.0, 0.0, &params());
        assert!((c.angle + 0.3).abs() < 1e-15);
        let ff = SteeringParams { feedforward: 0.16, ..params() };
        assert!((steering_command(0.0, 0.0, 2.0, &ff).angle - 0.32).abs() < 1e-15);
    }

    #[test]
    fn steering_clamps_and_saturates() {
        let c = steering_command(10.0, 0.0, 0.0, &params());
        assert_eq!(c.angle, -0.6);
        let c = steering_command(0.0, 2.0, 0.0, &params());
        assert!(c.saturated);
        assert_eq!(c.angle, -0.6);
        let wide = SteeringParams { max_steer: 100.0, ..params() };
        let c = steering_command(0.0, std::f64::consts::FRAC_PI_2, 0.0, &wide);
        assert!((c.angle + 3.0 * 0.4 * TAN_SATURATION).abs() < 1e-12);
        assert!(!steering_command(0.0, 1.0, 0.0, &wide).saturated);
    }

    #[test]
    fn steering_is_odd() {
        for &(d, p) in &[(0.05, 0.1), (-0.2, 0.3), (0.01, -0.4)] {
            let a = steering_command(d, p, 0.0, &params()).angle;
            let b = steering_command(-d, -p, 0.0, &params()).angle;
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn ideal_speed_tracking() {
        let mut t = SpeedTracker::<f64>::ideal(0.5);
        assert_eq!(t.track(1.0, 1.0, 0.02), 1.0);
        assert!((t.track(0.0, 1.0, 0.02) - 0.01).abs() < 1e-15);
        assert!((t.track(1.0, 0.0, 0.02) - 0.99).abs() < 1e-15);
        assert_eq!(t.track(0.995, 1.0, 0.02), 1.0);
    }

    #[test]
    fn pid_tracking() {
        let mut t = SpeedTracker::pid(1.0, 0.0, 0.0, 1.0, 1.0);
        assert_eq!(t.track(0.0, 1.0, 0.02), 1.0);
        let mut t = SpeedTracker::pid(0.0, 1.0, 0.0, 1.0, 0.05);
        for _ in 0..100 {
            t.track(0.0, 1.0, 0.02);
        }
        assert_eq!(t.integral(), 0.05, "integral is clamped");
        let mut t = SpeedTracker::<f64>::pid(0.0, 0.0, 1.0, 1.0, 1.0);
        assert_eq!(t.track(0.0, 1.0, 0.02), 0.0);
        assert!((t.track(0.5, 1.0, 0.02) + 25.0).abs() < 1e-12);
    }

    #[test]
    fn lane_change_requests() {
        let mut s = VehicleState::at_rest(0.0, 0.0, 0.0, 0, Role::Agent);
        assert!(!request_lane_change(&mut s, LaneDirection::Left, 3));
        assert!(request_lane_change(&mut s, LaneDirection::Right, 3));
        assert_eq!(s.lane_change, LaneChange::Right(1));
        assert!(!request_lane_change(&mut s, LaneDirection::Right, 3), "change already active");
        assert_eq!(s.lane_change, LaneChange::Right(1));
        let mut s = VehicleState::at_rest(0.0, 0.0, 0.0, 2, Role::Agent);
        assert!(!request_lane_change(&mut s, LaneDirection::Right, 3));
    }

    #[test]
    fn lane_change_completion() {
        let track = Track::<f64>::oval(&OvalSpec::default()).unwrap();
        let lane1 = track.lane(1).unwrap();
        let p = lane1.point_at(1.0);
        let h = lane1.heading_at(1.0);
        let mut s = VehicleState::at_rest(p.x, p.y, h, 0, Role::Agent);
        s.lane_change = LaneChange::Right(1);
        let lp = LaneChangeParams::default();
        let n = lane_change_update(&s, &track, &lp).unwrap();
        assert_eq!((n.lane, n.lane_change), (1, LaneChange::None));

        // one lane width away from the destination
        let q = track.lane(0).unwrap().point_at(1.0);
        let mut s = VehicleState::at_rest(q.x, q.y, h, 0, Role::Agent);
        s.lane_change = LaneChange::Right(1);
        let n = lane_change_update(&s, &track, &lp).unwrap();
        assert_eq!(n.lane_change, LaneChange::Right(1));

        let mut s = VehicleState::at_rest(q.x, q.y, h, 0, Role::Agent);
        s.lane_change = LaneChange::Right(7);
        let n = lane_change_update(&s, &track, &lp).unwrap();
        assert_eq!((n.lane, n.lane_change), (0, LaneChange::None));
    }

    #[test]
    fn closed_loop_lane_change_on_straight() {
        let spec = OvalSpec { lap_length_m: 40.0, aspect_ratio: 6.0, ..OvalSpec::default() };
        let track = Track::<f64>::oval(&spec).unwrap();
        let lw = track.lane_width();
        let start = track.lane(0).unwrap().point_at(0.0);
        let mut s = VehicleState::at_rest(start.x, start.y, 0.0, 0, Role::Agent);
        s.speed = 1.0;
        s.lane_change = LaneChange::Right(1);
        let sp = params();
        let lp = LaneChangeParams::default();
        let mut done_at = None;
        for tick in 0..500 {
            s = lane_change_update(&s, &track, &lp).unwrap();
            if !s.lane_change.is_active() {
                done_at = Some(tick);
                break;
            }
            let q = track.project(s.steering_lane(), s.position()).unwrap();
            let cmd = steering_command(q.offset, wrap_angle(s.heading - q.heading), q.curvature, &sp);
            s = step_bicycle(&s, cmd.angle, 0.02, 0.16);
        }
        let tick = done_at.expect("lane change completes");
        assert!(tick > 10, "needs some travel, took {tick}");
        let q = track.project(1, s.position()).unwrap();
        assert!(q.offset.abs() < 0.05 * lw);
    }
}
