//! Background-traffic driver model: IDM car following and MOBIL lane changes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("target speed must be positive, got {0}")]
    NonPositiveTargetSpeed(f64),
    #[error("invalid IDM parameters")]
    BadIdm,
    #[error("invalid MOBIL parameters")]
    BadMobil,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams<T> {
    /// alpha (m/s^2)
    #[serde(rename = "max_accel_mps2")]
    pub max_accel: T,
    /// beta (m/s^2)
    #[serde(rename = "comfortable_decel_mps2")]
    pub comfortable_decel: T,
    pub exponent: T,
    /// s0 (m)
    #[serde(rename = "jam_distance_m")]
    pub jam_distance: T,
    /// T (s)
    #[serde(rename = "time_headway_s")]
    pub time_headway: T,
}

impl<T: Real> IdmParams<T> {
    pub fn validate(&self) -> Result<(), TrafficError> {
        let z = T::zero();
        if self.max_accel > z
            && self.comfortable_decel > z
            && self.jam_distance > z
            && self.time_headway > z
            && self.exponent >= T::one()
        {
            Ok(())
        } else {
            Err(TrafficError::BadIdm)
        }
    }

    /// Hard braking floor, four times the comfortable deceleration.
    pub fn hard_decel(&self) -> T {
        T::lit(4.0) * self.comfortable_decel
    }
}

impl<T: Real> Default for IdmParams<T> {
    fn default() -> Self {
        Self {
            max_accel: T::lit(0.75),
            comfortable_decel: T::lit(1.0),
            exponent: T::lit(4.0),
            jam_distance: T::lit(0.10),
            time_headway: T::lit(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilParams<T> {
    pub politeness: T,
    /// Delta a_T (m/s^2)
    #[serde(rename = "threshold_mps2")]
    pub threshold: T,
    /// beta_n, the largest deceleration a change may impose on the new follower (m/s^2)
    #[serde(rename = "safe_decel_mps2")]
    pub safe_decel: T,
}

impl<T: Real> MobilParams<T> {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.politeness >= T::zero() && self.safe_decel > T::zero() {
            Ok(())
        } else {
            Err(TrafficError::BadMobil)
        }
    }
}

impl<T: Real> Default for MobilParams<T> {
    fn default() -> Self {
        Self { politeness: T::lit(0.5), threshold: T::lit(0.05), safe_decel: T::lit(1.5) }
    }
}

/// `s* = max(s0, s0 + T v + v dv / (2 sqrt(alpha beta)))`.
pub fn desired_gap<T: Real>(speed: T, closing_speed: T, p: &IdmParams<T>) -> T {
    let dyn_term = speed * closing_speed / (T::lit(2.0) * (p.max_accel * p.comfortable_decel).sqrt());
    let raw = p.jam_distance + p.time_headway * speed + dyn_term;
    raw.max(p.jam_distance)
}

/// IDM acceleration. Pass `gap = T::infinity()` and `closing_speed = 0` when
/// there is no leader. Non-positive gaps brake at the hard limit.
pub fn idm_acceleration<T: Real>(speed: T, target_speed: T, gap: T, closing_speed: T, p: &IdmParams<T>) -> Result<T, TrafficError> {
    if !(target_speed > T::zero()) {
        return Err(TrafficError::NonPositiveTargetSpeed(target_speed.as_f64()));
    }
    let floor = -p.hard_decel();
    if !(gap > T::zero()) {
        return Ok(floor);
    }
    let free = (speed / target_speed).powf(p.exponent);
    let interaction = if gap.is_infinite() {
        T::zero()
    } else {
        let r = desired_gap(speed, closing_speed, p) / gap;
        r * r
    };
    Ok((p.max_accel * (T::one() - free - interaction)).clamp_to(floor, p.max_accel))
}

/// Another vehicle as seen from the deciding vehicle. `gap` is bumper to
/// bumper along the lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub gap: T,
    pub speed: T,
    pub target_speed: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors<T> {
    pub leader: Option<Neighbor<T>>,
    pub follower: Option<Neighbor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilContext<T> {
    pub speed: T,
    pub target_speed: T,
    pub body_length: T,
    pub current: LaneNeighbors<T>,
    pub left: Option<LaneNeighbors<T>>,
    pub right: Option<LaneNeighbors<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobilChoice {
    Left,
    Right,
    None,
}

/// Outcome of evaluating one candidate side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideEvaluation<T> {
    pub gain_self: T,
    pub gain_new_follower: T,
    pub gain_old_follower: T,
    pub criterion: T,
    /// Acceleration the new follower would need after the change.
    pub new_follower_accel: Option<T>,
    pub vetoed: bool,
}

fn follow<T: Real>(speed: T, target: T, leader: Option<(T, T)>, p: &IdmParams<T>) -> Result<T, TrafficError> {
    match leader {
        Some((gap, lead_speed)) => idm_acceleration(speed, target, gap, speed - lead_speed, p),
        None => idm_acceleration(speed, target, T::infinity(), T::zero(), p),
    }
}

/// Incentive and safety terms for moving into the lane described by `side`.
pub fn evaluate_side<T: Real>(
    ctx: &MobilContext<T>,
    side: &LaneNeighbors<T>,
    mobil: &MobilParams<T>,
    idm: &IdmParams<T>,
) -> Result<SideEvaluation<T>, TrafficError> {
    let len = ctx.body_length;
    let lead = |n: &Option<Neighbor<T>>| n.map(|n| (n.gap, n.speed));

    let self_now = follow(ctx.speed, ctx.target_speed, lead(&ctx.current.leader), idm)?;
    let self_after = follow(ctx.speed, ctx.target_speed, lead(&side.leader), idm)?;
    let mut vetoed = side.leader.is_some_and(|l| l.gap <= T::zero());

    let (gain_new, new_follower_accel) = match side.follower {
        Some(nf) => {
            let before_leader = side.leader.map(|l| (nf.gap + len + l.gap, l.speed));
            let before = follow(nf.speed, nf.target_speed, before_leader, idm)?;
            let after = follow(nf.speed, nf.target_speed, Some((nf.gap, ctx.speed)), idm)?;
            if nf.gap <= T::zero() || after < -mobil.safe_decel {
                vetoed = true;
            }
            (after - before, Some(after))
        }
        None => (T::zero(), None),
    };

    let gain_old = match ctx.current.follower {
        Some(of) => {
            let before = follow(of.speed, of.target_speed, Some((of.gap, ctx.speed)), idm)?;
            let after_leader = ctx.current.leader.map(|l| (of.gap + len + l.gap, l.speed));
            let after = follow(of.speed, of.target_speed, after_leader, idm)?;
            after - before
        }
        None => T::zero(),
    };

    let gain_self = self_after - self_now;
    Ok(SideEvaluation {
        gain_self,
        gain_new_follower: gain_new,
        gain_old_follower: gain_old,
        criterion: gain_self + mobil.politeness * (gain_new + gain_old),
        new_follower_accel,
        vetoed,
    })
}

/// Chooses the better admissible side whose incentive exceeds the threshold.
/// Ties go left.
pub fn mobil_decision<T: Real>(ctx: &MobilContext<T>, mobil: &MobilParams<T>, idm: &IdmParams<T>) -> Result<MobilChoice, TrafficError> {
    let mut best: Option<(MobilChoice, T)> = None;
    for (choice, side) in [(MobilChoice::Left, &ctx.left), (MobilChoice::Right, &ctx.right)] {
        let Some(side) = side else { continue };
        let e = evaluate_side(ctx, side, mobil, idm)?;
        if e.vetoed || !(e.criterion > mobil.threshold) {
            continue;
        }
        if best.is_none_or(|(_, c)| e.criterion > c) {
            best = Some((choice, e.criterion));
        }
    }
    Ok(best.map_or(MobilChoice::None, |(c, _)| c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idm() -> IdmParams<f64> {
        IdmParams { time_headway: 0.5, ..IdmParams::default() }
    }

    #[test]
    fn desired_gap_examples() {
        assert!((desired_gap(1.0, 0.0, &idm()) - 0.6).abs() < 1e-15);
        assert_eq!(desired_gap(0.0, 3.0, &idm()), 0.1);
        assert_eq!(desired_gap(1.0, -10.0, &idm()), 0.1);
    }

    #[test]
    fn idm_examples() {
        let p = idm();
        assert_eq!(idm_acceleration(1.0, 1.0, f64::INFINITY, 0.0, &p).unwrap(), 0.0);
        assert_eq!(idm_acceleration(0.0, 1.0, f64::INFINITY, 0.0, &p).unwrap(), 0.75);
        let a = idm_acceleration(1.0, 2.0, 1.0, 0.0, &p).unwrap();
        assert!((a - 0.75 * (1.0 - 0.0625 - 0.36)).abs() < 1e-12, "{a}");
        assert!((a - 0.4331).abs() < 1e-4);
        assert!(matches!(idm_acceleration(1.0, 0.0, 1.0, 0.0, &p), Err(TrafficError::NonPositiveTargetSpeed(_))));
    }

    #[test]
    fn idm_clamps() {
        let p = idm();
        assert_eq!(idm_acceleration(1.0, 1.0, 0.001, 1.0, &p).unwrap(), -4.0);
        assert_eq!(idm_acceleration(1.0, 1.0, -0.1, 0.0, &p).unwrap(), -4.0);
        // standstill at the jam distance is an equilibrium
        assert_eq!(idm_acceleration(0.0, 1.0, p.jam_distance, 0.0, &p).unwrap(), 0.0);
    }

    fn free_ctx() -> MobilContext<f64> {
        MobilContext {
            speed: 1.0,
            target_speed: 1.0,
            body_length: 0.32,
            current: LaneNeighbors::default(),
            left: Some(LaneNeighbors::default()),
            right: Some(LaneNeighbors::default()),
        }
    }

    #[test]
    fn empty_road_keeps_lane() {
        let c = mobil_decision(&free_ctx(), &MobilParams::default(), &idm()).unwrap();
        assert_eq!(c, MobilChoice::None);
    }

    #[test]
    fn blocked_vehicle_changes_lane() {
        let mut ctx = free_ctx();
        ctx.speed = 0.5;
        ctx.current.leader = Some(Neighbor { gap: 0.12, speed: 0.0, target_speed: 1.0 });
        let m = MobilParams { politeness: 0.0, ..MobilParams::default() };
        let blocked = idm_acceleration(0.5, 1.0, 0.12, 0.5, &idm()).unwrap();
        let free = idm_acceleration(0.5, 1.0, f64::INFINITY, 0.0, &idm()).unwrap();
        assert!(free - blocked > m.threshold);
        assert_eq!(mobil_decision(&ctx, &m, &idm()).unwrap(), MobilChoice::Left);
        ctx.left = None;
        assert_eq!(mobil_decision(&ctx, &m, &idm()).unwrap(), MobilChoice::Right);
    }

    #[test]
    fn safety_veto() {
        let mut ctx = free_ctx();
        ctx.speed = 0.2;
        ctx.current.leader = Some(Neighbor { gap: 0.12, speed: 0.0, target_speed: 1.0 });
        // a fast follower right behind on the left
        ctx.left = Some(LaneNeighbors { leader: None, follower: Some(Neighbor { gap: 0.15, speed: 1.2, target_speed: 1.2 }) });
        ctx.right = None;
        let e = evaluate_side(&ctx, ctx.left.as_ref().unwrap(), &MobilParams::default(), &idm()).unwrap();
        assert!(e.vetoed);
        assert!(e.new_follower_accel.unwrap() < -1.5);
        assert_eq!(mobil_decision(&ctx, &MobilParams::default(), &idm()).unwrap(), MobilChoice::None);
    }

    #[test]
    fn better_side_wins() {
        let mut ctx = free_ctx();
        ctx.speed = 0.8;
        ctx.current.leader = Some(Neighbor { gap: 0.2, speed: 0.0, target_speed: 1.0 });
        ctx.left = Some(LaneNeighbors { leader: Some(Neighbor { gap: 0.6, speed: 0.5, target_speed: 1.0 }), follower: None });
        ctx.right = Some(LaneNeighbors::default());
        assert_eq!(mobil_decision(&ctx, &MobilParams::default(), &idm()).unwrap(), MobilChoice::Right);
    }
}
