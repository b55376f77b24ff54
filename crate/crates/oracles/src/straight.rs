//! Hand-stepped ticks for vehicles on a straight stretch travelling along
//! `+x`, where lane projection reduces to `s = x` and `delta = y - lane_y`.
//!
//! Only the pieces needed for a short, uneventful trace are modelled: an
//! agent with ideal speed tracking, background vehicles running IDM behind a
//! same-lane leader, the steering law, Euler bicycle integration and the
//! reward. Lane changes and collisions are out of scope.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Car {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub commanded: f64,
    pub target: f64,
    pub lane: usize,
    pub background: bool,
}

#[derive(Debug, Clone)]
pub struct Params {
    pub lane_y: Vec<f64>,
    pub dt: f64,
    pub wheel_base: f64,
    pub body_length: f64,
    pub accel_step: f64,
    pub accel_limit: f64,
    pub v_max: f64,
    pub gain: f64,
    pub damping: f64,
    pub max_steer: f64,
    pub idm_alpha: f64,
    pub idm_beta: f64,
    pub idm_delta: f64,
    pub idm_s0: f64,
    pub idm_t: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub lane_width: f64,
}

fn idm(p: &Params, v: f64, v0: f64, gap: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / v0).powf(p.idm_delta);
    let a = match gap {
        None => p.idm_alpha * free,
        Some((s, dv)) => {
            let star = (p.idm_s0 + v * p.idm_t + v * dv / (2.0 * (p.idm_alpha * p.idm_beta).sqrt())).max(p.idm_s0);
            p.idm_alpha * (free - (star / s) * (star / s))
        }
    };
    a.clamp(-4.0 * p.idm_beta, p.idm_alpha)
}

/// Advances one tick. `accel` is -1, 0 or +1 for vehicle 0 (the agent).
pub fn tick(p: &Params, cars: &mut [Car], accel: i32) {
    cars[0].commanded = (cars[0].commanded + accel as f64 * p.accel_step * p.dt).clamp(0.0, p.v_max);

    let mut commanded = Vec::new();
    for (i, c) in cars.iter().enumerate() {
        if !c.background {
            commanded.push(c.commanded);
            continue;
        }
        let leader = cars
            .iter()
            .enumerate()
            .filter(|&(k, o)| k != i && o.lane == c.lane && o.x > c.x)
            .min_by(|a, b| a.1.x.partial_cmp(&b.1.x).unwrap())
            .map(|(_, o)| (o.x - c.x - p.body_length, c.speed - o.speed * o.heading.cos()));
        let a = idm(p, c.speed, c.target, leader);
        commanded.push((c.speed + a * p.dt).clamp(0.0, p.v_max));
    }

    for (c, cmd) in cars.iter_mut().zip(commanded) {
        c.commanded = cmd;
        let step = (cmd - c.speed).clamp(-p.accel_limit * p.dt, p.accel_limit * p.dt);
        c.speed = (c.speed + step).max(0.0);
        let delta = c.y - p.lane_y[c.lane];
        let phi = (-p.gain * delta - p.gain * p.damping * c.heading.tan()).clamp(-p.max_steer, p.max_steer);
        c.x += c.speed * c.heading.cos() * p.dt;
        c.y += c.speed * c.heading.sin() * p.dt;
        c.heading += c.speed / p.wheel_base * phi.tan() * p.dt;
    }
}

/// Reward of vehicle 0 from rear-axle distances.
pub fn reward(p: &Params, cars: &[Car]) -> f64 {
    let me = cars[0];
    let (mut same, mut any) = (f64::INFINITY, f64::INFINITY);
    for o in &cars[1..] {
        let d = (o.x - me.x).hypot(o.y - me.y);
        any = any.min(d);
        if o.lane == me.lane {
            same = same.min(d);
        }
    }
    let p1 = (p.c1 * p.body_length - same).max(0.0);
    let p2 = (p.c2 * p.lane_width - any).max(0.0);
    -p.c0 * (me.speed - me.target).abs() - p1.max(p2)
}
