//! Randomised scenario generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvConfig, EnvError, World, AGENT};
use crate::dynamics::{boxes_collide, vehicle_box, OrientedBox, Role, VehicleState};
use crate::scalar::Real;
use crate::track::Track;

const MAX_ATTEMPTS: usize = 2000;

struct Placed<T> {
    lane: usize,
    /// Fraction of the lap in `[0, 1)`.
    frac: f64,
    bbox: OrientedBox<T>,
}

fn cyclic(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn pose_at<T: Real>(track: &Track<T>, lane: usize, frac: f64, role: Role) -> VehicleState<T> {
    let l = &track.lanes()[lane];
    let s = l.wrap_s(T::lit(frac) * l.total_length());
    let p = l.point_at(s);
    VehicleState::at_rest(p.x, p.y, l.heading_at(s), lane, role)
}

/// Builds a randomised world: at least one obstacle per lane with obstacles
/// at least four body lengths apart along the lap, and moving vehicles
/// spaced at least `s0 + L` within their lane. Deterministic in `seed`.
pub fn randomize_scenario<T: Real>(config: &EnvConfig<T>, track: &Track<T>, seed: u64) -> Result<World<T>, EnvError> {
    let m = track.lane_count();
    if config.obstacles < m {
        return Err(EnvError::Infeasible(format!("{} obstacles cannot cover {m} lanes", config.obstacles)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lanes = track.lanes();
    let ref_len = lanes[track.reference_lane()].total_length().as_f64();
    let body = config.geometry.body_length.as_f64();
    let obstacle_sep = 4.0 * body / ref_len;
    let same_lane_gap = config.idm.jam_distance.as_f64() + body;

    let mut placed: Vec<Placed<T>> = Vec::new();
    let mut obstacles = Vec::with_capacity(config.obstacles);
    let mut obstacle_lanes: Vec<usize> = (0..m).collect();
    obstacle_lanes.shuffle(&mut rng);
    while obstacle_lanes.len() < config.obstacles {
        obstacle_lanes.push(rng.gen_range(0..m));
    }
    for &lane in &obstacle_lanes {
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let frac: f64 = rng.gen();
            if placed.iter().all(|p| cyclic(p.frac, frac) >= obstacle_sep) {
                ok = Some(frac);
                break;
            }
        }
        let frac = ok.ok_or_else(|| EnvError::Infeasible(format!("cannot space {} obstacles", config.obstacles)))?;
        let mut v = pose_at(track, lane, frac, Role::Obstacle);
        v.target_speed = T::zero();
        placed.push(Placed { lane, frac, bbox: vehicle_box(&v, &config.geometry)? });
        obstacles.push(v);
    }

    let (lo, hi) = (config.target_speed_min_mps.as_f64(), config.target_speed_max_mps.as_f64());
    let mut movers = Vec::with_capacity(config.vehicles);
    for i in 0..config.vehicles {
        let role = if i == AGENT { Role::Agent } else { Role::Background };
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let lane = rng.gen_range(0..m);
            let frac: f64 = rng.gen();
            let lane_len = lanes[lane].total_length().as_f64();
            let v = pose_at(track, lane, frac, role);
            let bbox = vehicle_box(&v, &config.geometry)?;
            let clear = placed.iter().all(|p| {
                (p.lane != lane || cyclic(p.frac, frac) * lane_len >= same_lane_gap) && !boxes_collide(&p.bbox, &bbox)
            });
            if clear {
                ok = Some((lane, frac, v, bbox));
                break;
            }
        }
        let (lane, frac, mut v, bbox) =
            ok.ok_or_else(|| EnvError::Infeasible(format!("cannot fit {} vehicles on the track", config.vehicles)))?;
        v.target_speed = T::lit(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        placed.push(Placed { lane, frac, bbox });
        movers.push(v);
    }

    let vehicles: Vec<VehicleState<T>> = movers.into_iter().chain(obstacles).collect();
    Ok(World::from_vehicles(vehicles, track, seed)?)
}
