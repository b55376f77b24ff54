//! Observation assembly and the proximity-penalised speed reward.

use super::{EnvConfig, World};
use crate::scalar::Real;
use crate::track::Track;

pub const SELF_DIM: usize = 5;
pub const NEIGHBOR_DIM: usize = 6;
pub const NEIGHBOR_SLOTS: usize = 6;

/// Self vector `[v_c, v_t, l_r, l_l, s]` and six neighbour vectors
/// `[d, cos(theta), sin(theta), v_r, dl, s]` ordered by distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub self_obs: [T; SELF_DIM],
    pub neighbors: [[T; NEIGHBOR_DIM]; NEIGHBOR_SLOTS],
    /// Which slots hold padding.
    pub null: [bool; NEIGHBOR_SLOTS],
    /// Vehicle ids behind the real slots.
    pub ids: [Option<usize>; NEIGHBOR_SLOTS],
}

impl<T: Real> Observation<T> {
    pub fn null_neighbor(vision_radius: T) -> [T; NEIGHBOR_DIM] {
        let z = T::zero();
        [vision_radius, z, z, z, z, z]
    }
}

fn flag<T: Real>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

pub fn observe<T: Real>(world: &World<T>, track: &Track<T>, config: &EnvConfig<T>, vehicle: usize) -> Observation<T> {
    let me = &world.vehicles[vehicle];
    let self_obs = [
        me.speed,
        me.target_speed,
        T::lit(track.lanes_right_of(me.lane) as f64),
        T::lit(track.lanes_left_of(me.lane) as f64),
        flag(me.lane_change.is_active()),
    ];
    let rv = config.vision_radius_m;
    let mut near: Vec<(T, usize)> = (0..world.len())
        .filter(|&k| k != vehicle)
        .map(|k| (world.vehicles[k].position().dist(me.position()), k))
        .filter(|&(d, _)| d <= rv)
        .collect();
    near.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));

    let mut obs = Observation {
        self_obs,
        neighbors: [Observation::null_neighbor(rv); NEIGHBOR_SLOTS],
        null: [true; NEIGHBOR_SLOTS],
        ids: [None; NEIGHBOR_SLOTS],
    };
    let (c, s) = (me.heading.cos(), me.heading.sin());
    let own_speed = world.lanewise_speed(vehicle);
    for (slot, &(d, k)) in near.iter().take(NEIGHBOR_SLOTS).enumerate() {
        let other = &world.vehicles[k];
        let rel = other.position() - me.position();
        let (fwd, left) = (rel.x * c + rel.y * s, -rel.x * s + rel.y * c);
        let (cos_t, sin_t) = if d > T::zero() { (fwd / d, left / d) } else { (T::one(), T::zero()) };
        obs.neighbors[slot] = [
            d,
            cos_t,
            sin_t,
            world.lanewise_speed(k) - own_speed,
            T::lit(other.lane as f64) - T::lit(me.lane as f64),
            flag(other.lane_change.is_active()),
        ];
        obs.null[slot] = false;
        obs.ids[slot] = Some(k);
    }
    obs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams<T> {
    pub c0: T,
    pub c1: T,
    pub c2: T,
    pub vehicle_length: T,
    pub lane_separation: T,
}

/// `-c0 |v - v_t| - max(p1, p2)` with hinge penalties on the nearest
/// same-lane distance (`c1 L`) and the nearest distance in any lane (`c2 lambda`).
pub fn reward_from_distances<T: Real>(speed: T, target_speed: T, same_lane: T, any_lane: T, p: &RewardParams<T>) -> T {
    let p1 = (p.c1 * p.vehicle_length - same_lane).max(T::zero());
    let p2 = (p.c2 * p.lane_separation - any_lane).max(T::zero());
    -p.c0 * (speed - target_speed).abs() - p1.max(p2)
}

pub fn reward<T: Real>(world: &World<T>, vehicle: usize, params: &RewardParams<T>) -> T {
    let me = &world.vehicles[vehicle];
    let mut same = T::infinity();
    let mut any = T::infinity();
    for (k, other) in world.vehicles.iter().enumerate() {
        if k == vehicle {
            continue;
        }
        let d = other.position().dist(me.position());
        any = any.min(d);
        if other.lane == me.lane {
            same = same.min(d);
        }
    }
    reward_from_distances(me.speed, me.target_speed, same, any, params)
}
