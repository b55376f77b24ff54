//! Kinematic bicycle integration and oriented-box collision checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::scalar::{wrap_angle, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("vehicle geometry must be positive with the body enclosing the wheelbase (wheelbase {wheel_base}, body {length} x {width})")]
    BadGeometry { wheel_base: f64, length: f64, width: f64 },
    #[error("box half extents must be positive, got {0} x {1}")]
    BadBox(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Agent,
    Background,
    Obstacle,
    BridgedPlant,
}

impl Role {
    pub fn is_learning_agent(self) -> bool {
        matches!(self, Role::Agent | Role::BridgedPlant)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agent => "agent",
            Role::Background => "background",
            Role::Obstacle => "obstacle",
            Role::BridgedPlant => "plant",
        }
    }
}

/// Lane-change status; the payload is the destination lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneChange {
    None,
    Left(usize),
    Right(usize),
}

impl LaneChange {
    pub fn is_active(self) -> bool {
        !matches!(self, LaneChange::None)
    }

    pub fn target(self) -> Option<usize> {
        match self {
            LaneChange::None => None,
            LaneChange::Left(l) | LaneChange::Right(l) => Some(l),
        }
    }
}

/// Pose is the rear-axle centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
    pub speed: T,
    pub commanded_speed: T,
    pub lane: usize,
    pub lane_change: LaneChange,
    pub target_speed: T,
    pub role: Role,
}

impl<T: Real> VehicleState<T> {
    pub fn at_rest(x: T, y: T, heading: T, lane: usize, role: Role) -> Self {
        Self {
            x,
            y,
            heading,
            speed: T::zero(),
            commanded_speed: T::zero(),
            lane,
            lane_change: LaneChange::None,
            target_speed: T::zero(),
            role,
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    /// Lane whose centreline the low-level controller follows.
    pub fn steering_lane(&self) -> usize {
        self.lane_change.target().unwrap_or(self.lane)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleGeometry<T> {
    #[serde(rename = "wheel_base_m")]
    pub wheel_base: T,
    #[serde(rename = "body_length_m")]
    pub body_length: T,
    #[serde(rename = "body_width_m")]
    pub body_width: T,
}

impl<T: Real> VehicleGeometry<T> {
    pub fn new(wheel_base: T, body_length: T, body_width: T) -> Result<Self, DynamicsError> {
        let g = Self { wheel_base, body_length, body_width };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let ok = self.wheel_base > T::zero()
            && self.body_length > T::zero()
            && self.body_width > T::zero()
            && self.body_length >= self.wheel_base;
        if ok {
            Ok(())
        } else {
            Err(DynamicsError::BadGeometry {
                wheel_base: self.wheel_base.as_f64(),
                length: self.body_length.as_f64(),
                width: self.body_width.as_f64(),
            })
        }
    }
}

impl<T: Real> Default for VehicleGeometry<T> {
    fn default() -> Self {
        Self { wheel_base: T::lit(0.16), body_length: T::lit(0.32), body_width: T::lit(0.20) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox<T> {
    pub centre: Vec2<T>,
    pub heading: T,
    pub half_length: T,
    pub half_width: T,
}

impl<T: Real> OrientedBox<T> {
    pub fn new(centre: Vec2<T>, heading: T, half_length: T, half_width: T) -> Result<Self, DynamicsError> {
        if !(half_length > T::zero() && half_width > T::zero()) {
            return Err(DynamicsError::BadBox(half_length.as_f64(), half_width.as_f64()));
        }
        Ok(Self { centre, heading, half_length, half_width })
    }

    /// Radius of the circumscribed circle.
    pub fn reach(&self) -> T {
        self.half_length.hypot(self.half_width)
    }

    fn axes(&self) -> (Vec2<T>, Vec2<T>) {
        let u = Vec2::from_angle(self.heading);
        (u, u.perp())
    }

    /// Half-width of the box's shadow on unit axis `n`.
    fn radius_on(&self, n: Vec2<T>) -> T {
        let (u, v) = self.axes();
        self.half_length * u.dot(n).abs() + self.half_width * v.dot(n).abs()
    }

    pub fn contains(&self, p: Vec2<T>) -> bool {
        let (u, v) = self.axes();
        let d = p - self.centre;
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }
}

/// One explicit Euler step of the kinematic bicycle model. Speed is unchanged.
pub fn step_bicycle<T: Real>(state: &VehicleState<T>, steering: T, dt: T, wheel_base: T) -> VehicleState<T> {
    let mut next = *state;
    let v = state.speed;
    next.x = state.x + v * state.heading.cos() * dt;
    next.y = state.y + v * state.heading.sin() * dt;
    next.heading = wrap_angle(state.heading + v / wheel_base * steering.tan() * dt);
    next
}

/// Collision box: rear-axle pose advanced by half the body length.
pub fn vehicle_box<T: Real>(state: &VehicleState<T>, geometry: &VehicleGeometry<T>) -> Result<OrientedBox<T>, DynamicsError> {
    let half = geometry.body_length * T::lit(0.5);
    let centre = state.position() + Vec2::from_angle(state.heading) * half;
    OrientedBox::new(centre, state.heading, half, geometry.body_width * T::lit(0.5))
}

/// Separating-axis test over both boxes' axes. Touching counts as a collision.
pub fn boxes_collide<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> bool {
    let d = b.centre - a.centre;
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    for n in [au, av, bu, bv] {
        if d.dot(n).abs() > a.radius_on(n) + b.radius_on(n) {
            return false;
        }
    }
    true
}

/// Colliding index pairs `(i, j)`, `i < j`, sorted.
///
/// Broad phase buckets boxes by a longitudinal key (arc position along the
/// track, periodic with `period`) into cells of width at least `cell`; only
/// boxes in the same or neighbouring cells reach the separating-axis test.
/// `cell` must bound the key distance of any two touching boxes.
pub fn detect_collisions<T: Real>(boxes: &[OrientedBox<T>], keys: &[T], period: T, cell: T) -> Vec<(usize, usize)> {
    assert_eq!(boxes.len(), keys.len(), "one key per box");
    let n = boxes.len();
    let mut pairs = Vec::new();
    let cells = (period / cell).floor().to_usize().unwrap_or(1).max(1);
    if cells < 3 {
        for i in 0..n {
            for j in (i + 1)..n {
                if boxes_collide(&boxes[i], &boxes[j]) {
                    pairs.push((i, j));
                }
            }
        }
        return pairs;
    }
    let width = period / T::lit(cells as f64);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for (i, &k) in keys.iter().enumerate() {
        let mut w = k % period;
        if w < T::zero() {
            w = w + period;
        }
        let c = (w / width).floor().to_usize().unwrap_or(0).min(cells - 1);
        buckets[c].push(i);
    }
    for c in 0..cells {
        let here = &buckets[c];
        let next = &buckets[(c + 1) % cells];
        for (p, &i) in here.iter().enumerate() {
            for &j in &here[p + 1..] {
                if boxes_collide(&boxes[i], &boxes[j]) {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
            for &j in next {
                if boxes_collide(&boxes[i], &boxes[j]) {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}
