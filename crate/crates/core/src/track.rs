//! Closed multi-lane circuit built from chains of cubic Bezier segments.
//!
//! Every lane carries an arc-length table so that controllers can work in the
//! path domain (`s`, offset `delta`, relative heading, curvature).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::scalar::{wrap_angle, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("curve parameter {0} is outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("degenerate Bezier segment")]
    DegenerateSegment,
    #[error("degenerate tangent at u = {0}")]
    DegenerateTangent(f64),
    #[error("lane {lane} is not closed (endpoint gap {gap} m)")]
    NotClosed { lane: usize, gap: f64 },
    #[error("lane {lane} turns by {angle} rad at junction {junction}")]
    NotSmooth { lane: usize, junction: usize, angle: f64 },
    #[error("lane has no segments")]
    EmptyLane,
    #[error("track needs at least one lane")]
    NoLanes,
    #[error("lane width must be positive, got {0}")]
    BadLaneWidth(f64),
    #[error("lane index {0} out of range")]
    NoSuchLane(usize),
    #[error("point is {distance} m from the lane, beyond the {limit} m limit")]
    TooFar { distance: f64, limit: f64 },
    #[error("lanes {a} and {b} have inconsistent lengths {len_a} m and {len_b} m")]
    InconsistentLanes { a: usize, b: usize, len_a: f64, len_b: f64 },
    #[error("curvature {curvature} 1/m exceeds the drivable limit {limit} 1/m")]
    TooCurved { curvature: f64, limit: f64 },
    #[error("invalid oval description: {0}")]
    InvalidOval(String),
}

// 5-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierSegment<T> {
    pub p0: Vec2<T>,
    pub p1: Vec2<T>,
    pub p2: Vec2<T>,
    pub p3: Vec2<T>,
}

impl<T: Real> BezierSegment<T> {
    pub fn new(p0: Vec2<T>, p1: Vec2<T>, p2: Vec2<T>, p3: Vec2<T>) -> Result<Self, TrackError> {
        if p0 == p3 && (p1 == p2 || p1 == p0) {
            return Err(TrackError::DegenerateSegment);
        }
        Ok(Self { p0, p1, p2, p3 })
    }

    /// Straight segment with control points at thirds.
    pub fn line(a: Vec2<T>, b: Vec2<T>) -> Result<Self, TrackError> {
        let third = T::lit(1.0 / 3.0);
        Self::new(a, a + (b - a) * third, a + (b - a) * (T::one() - third), b)
    }

    /// Cubic approximation of a circular arc around `centre` from angle `a0` to `a1`.
    pub fn arc(centre: Vec2<T>, radius: T, a0: T, a1: T) -> Result<Self, TrackError> {
        let k = T::lit(4.0 / 3.0) * ((a1 - a0) / T::lit(4.0)).tan() * radius;
        let s = centre + Vec2::from_angle(a0) * radius;
        let e = centre + Vec2::from_angle(a1) * radius;
        Self::new(s, s + Vec2::from_angle(a0).perp() * k, e - Vec2::from_angle(a1).perp() * k, e)
    }

    /// Point at `u`; errors outside `[0, 1]`.
    pub fn eval(&self, u: T) -> Result<Vec2<T>, TrackError> {
        if !(u >= T::zero() && u <= T::one()) {
            return Err(TrackError::ParameterOutOfRange(u.as_f64()));
        }
        Ok(self.point(u))
    }

    #[inline]
    pub(crate) fn point(&self, u: T) -> Vec2<T> {
        let v = T::one() - u;
        let three = T::lit(3.0);
        self.p0 * (v * v * v) + self.p1 * (three * v * v * u) + self.p2 * (three * v * u * u) + self.p3 * (u * u * u)
    }

    #[inline]
    pub fn derivative(&self, u: T) -> Vec2<T> {
        let v = T::one() - u;
        let three = T::lit(3.0);
        let six = T::lit(6.0);
        (self.p1 - self.p0) * (three * v * v) + (self.p2 - self.p1) * (six * v * u) + (self.p3 - self.p2) * (three * u * u)
    }

    #[inline]
    pub fn second_derivative(&self, u: T) -> Vec2<T> {
        let six = T::lit(6.0);
        let a = self.p2 - self.p1 * T::lit(2.0) + self.p0;
        let b = self.p3 - self.p2 * T::lit(2.0) + self.p1;
        a * (six * (T::one() - u)) + b * (six * u)
    }

    /// Signed curvature, positive when turning left.
    pub fn curvature(&self, u: T) -> Result<T, TrackError> {
        let d1 = self.derivative(u);
        let speed_sq = d1.norm_sq();
        if speed_sq.sqrt() <= T::lit(1e-9) {
            return Err(TrackError::DegenerateTangent(u.as_f64()));
        }
        let d2 = self.second_derivative(u);
        Ok(d1.cross(d2) / (speed_sq * speed_sq.sqrt()))
    }

    /// Arc length between two parameters by 5-point Gauss-Legendre.
    pub fn length_between(&self, u0: T, u1: T) -> T {
        let half = (u1 - u0) * T::lit(0.5);
        let mid = (u1 + u0) * T::lit(0.5);
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS.iter())
            .map(|(&x, &w)| T::lit(w) * self.derivative(mid + half * T::lit(x)).norm())
            .sum::<T>()
            * half
    }

    fn length_estimate(&self) -> T {
        let n = 16;
        (0..n)
            .map(|i| {
                let a = T::lit(i as f64 / n as f64);
                let b = T::lit((i + 1) as f64 / n as f64);
                self.length_between(a, b)
            })
            .sum()
    }
}

/// Monotone map from cumulative arc length to `(segment, u)`.
#[derive(Debug, Clone)]
pub struct ArcTable<T> {
    s: Vec<T>,
    seg: Vec<usize>,
    u: Vec<T>,
    pts: Vec<Vec2<T>>,
    seg_first: Vec<usize>,
    total: T,
}

impl<T: Real> ArcTable<T> {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn total_length(&self) -> T {
        self.total
    }

    /// `(s, segment, u)` of entry `i`.
    pub fn entry(&self, i: usize) -> (T, usize, T) {
        (self.s[i], self.seg[i], self.u[i])
    }
}

/// Builds the arc-length table with entries spaced at most `resolution` apart.
pub fn build_arc_table<T: Real>(segments: &[BezierSegment<T>], resolution: T) -> ArcTable<T> {
    let mut table = ArcTable {
        s: Vec::new(),
        seg: Vec::new(),
        u: Vec::new(),
        pts: Vec::new(),
        seg_first: Vec::with_capacity(segments.len()),
        total: T::zero(),
    };
    let mut acc = T::zero();
    for (k, seg) in segments.iter().enumerate() {
        table.seg_first.push(table.s.len());
        let est = seg.length_estimate();
        let n = (est / resolution).ceil().to_usize().unwrap_or(1).max(1);
        for i in 0..n {
            let u0 = T::lit(i as f64 / n as f64);
            let u1 = T::lit((i + 1) as f64 / n as f64);
            table.s.push(acc);
            table.seg.push(k);
            table.u.push(u0);
            table.pts.push(seg.point(u0));
            acc = acc + seg.length_between(u0, u1);
        }
    }
    table.total = acc;
    table
}

/// Nearest-point query result on a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    /// Arc length of the nearest lane point.
    pub s: T,
    /// Signed perpendicular offset, positive to the left of travel.
    pub offset: T,
    /// Lane tangent heading at the nearest point.
    pub heading: T,
    pub curvature: T,
    pub segment: usize,
    pub u: T,
}

#[derive(Debug, Clone)]
pub struct Lane<T> {
    segments: Vec<BezierSegment<T>>,
    table: ArcTable<T>,
}

impl<T: Real> Lane<T> {
    /// Validates closure and tangent continuity, then builds the arc table.
    pub fn new(segments: Vec<BezierSegment<T>>, resolution: T) -> Result<Self, TrackError> {
        Self::with_index(segments, resolution, 0)
    }

    fn with_index(segments: Vec<BezierSegment<T>>, resolution: T, lane: usize) -> Result<Self, TrackError> {
        if segments.is_empty() {
            return Err(TrackError::EmptyLane);
        }
        let n = segments.len();
        let gap = segments[n - 1].p3.dist(segments[0].p0);
        // tolerances widen to the scalar's precision (f32)
        let gap_tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        let angle_tol = T::lit(1e-6).max(T::epsilon() * T::lit(64.0));
        if gap > gap_tol {
            return Err(TrackError::NotClosed { lane, gap: gap.as_f64() });
        }
        for j in 0..n {
            let a = &segments[j];
            let b = &segments[(j + 1) % n];
            let ta = a.derivative(T::one());
            let tb = b.derivative(T::zero());
            if ta.norm() <= T::lit(1e-12) || tb.norm() <= T::lit(1e-12) {
                return Err(TrackError::DegenerateTangent(1.0));
            }
            let angle = wrap_angle(tb.angle() - ta.angle()).abs();
            if angle > angle_tol {
                return Err(TrackError::NotSmooth { lane, junction: j, angle: angle.as_f64() });
            }
        }
        let table = build_arc_table(&segments, resolution);
        Ok(Self { segments, table })
    }

    pub fn segments(&self) -> &[BezierSegment<T>] {
        &self.segments
    }

    pub fn arc_table(&self) -> &ArcTable<T> {
        &self.table
    }

    pub fn total_length(&self) -> T {
        self.table.total
    }

    /// Wraps `s` into `[0, total_length)`.
    pub fn wrap_s(&self, s: T) -> T {
        let l = self.table.total;
        let mut w = s % l;
        if w < T::zero() {
            w = w + l;
        }
        if w >= l {
            w = T::zero();
        }
        w
    }

    /// Arc length at `(segment, u)`.
    pub fn s_at(&self, segment: usize, u: T) -> T {
        let first = self.table.seg_first[segment];
        let end = self.table.seg_first.get(segment + 1).copied().unwrap_or(self.table.len());
        // last entry of this segment whose u <= target
        let slice = &self.table.u[first..end];
        let idx = first + slice.partition_point(|&x| x <= u).saturating_sub(1);
        let seg = &self.segments[segment];
        self.table.s[idx] + seg.length_between(self.table.u[idx], u)
    }

    /// `(segment, u)` at arc length `s` (wrapped).
    pub fn locate(&self, s: T) -> (usize, T) {
        let s = self.wrap_s(s);
        let i = self.table.s.partition_point(|&x| x <= s).saturating_sub(1);
        let seg_idx = self.table.seg[i];
        let seg = &self.segments[seg_idx];
        let u_lo = self.table.u[i];
        let u_hi = if i + 1 < self.table.len() && self.table.seg[i + 1] == seg_idx {
            self.table.u[i + 1]
        } else {
            T::one()
        };
        let target = s - self.table.s[i];
        let mut u = u_lo + target / seg.derivative(u_lo).norm().max(T::lit(1e-12));
        for _ in 0..4 {
            u = u.clamp_to(u_lo, u_hi);
            let g = seg.length_between(u_lo, u) - target;
            u = u - g / seg.derivative(u).norm().max(T::lit(1e-12));
        }
        (seg_idx, u.clamp_to(u_lo, u_hi))
    }

    pub fn point_at(&self, s: T) -> Vec2<T> {
        let (k, u) = self.locate(s);
        self.segments[k].point(u)
    }

    pub fn heading_at(&self, s: T) -> T {
        let (k, u) = self.locate(s);
        self.segments[k].derivative(u).angle()
    }

    pub fn curvature_at(&self, s: T) -> T {
        let (k, u) = self.locate(s);
        self.segments[k].curvature(u).unwrap_or(T::zero())
    }

    /// Nearest point on the lane by a full coarse scan of the arc table followed
    /// by Newton refinement. Equidistant candidates resolve to the smaller `s`.
    pub fn project(&self, point: Vec2<T>, max_distance: T) -> Result<Projection<T>, TrackError> {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, p) in self.table.pts.iter().enumerate() {
            let d = (*p - point).norm_sq();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.refine(point, best, max_distance)
    }

    /// As [`Lane::project`], scanning only entries within `window` metres of `hint`.
    pub fn project_near(&self, point: Vec2<T>, hint: T, window: T, max_distance: T) -> Result<Projection<T>, TrackError> {
        let n = self.table.len();
        let hint = self.wrap_s(hint);
        let centre = self.table.s.partition_point(|&x| x <= hint).saturating_sub(1);
        let mean_step = self.table.total / T::lit(n as f64);
        let reach = (window / mean_step).ceil().to_usize().unwrap_or(n).min(n / 2);
        let mut best = centre;
        let mut best_d = T::infinity();
        for off in 0..=(2 * reach) {
            let i = (centre + n + off - reach) % n;
            let d = (self.table.pts[i] - point).norm_sq();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.refine(point, best, max_distance)
    }

    fn refine(&self, point: Vec2<T>, entry: usize, max_distance: T) -> Result<Projection<T>, TrackError> {
        let n = self.segments.len();
        let mut k = self.table.seg[entry];
        let mut u = self.table.u[entry];
        let mut came_from: Option<usize> = None;
        let scale = self.table.total.max(T::one());
        let tol = T::lit(5e-11).max(T::epsilon() * T::lit(64.0) * scale);
        for _ in 0..60 {
            let seg = &self.segments[k];
            let r = seg.point(u) - point;
            let d1 = seg.derivative(u);
            let f = r.dot(d1);
            if f.abs() < tol {
                break;
            }
            let fp = d1.norm_sq() + r.dot(seg.second_derivative(u));
            let fp = if fp > T::zero() { fp } else { d1.norm_sq() };
            let next = u - f / fp;
            if next < T::zero() {
                let prev = (k + n - 1) % n;
                if came_from == Some(prev) || n == 1 && u == T::zero() {
                    u = T::zero();
                    break;
                }
                came_from = Some(k);
                k = prev;
                u = T::one();
            } else if next > T::one() {
                let nxt = (k + 1) % n;
                if came_from == Some(nxt) || n == 1 && u == T::one() {
                    u = T::one();
                    break;
                }
                came_from = Some(k);
                k = nxt;
                u = T::zero();
            } else {
                u = next;
            }
        }
        let seg = &self.segments[k];
        let foot = seg.point(u);
        let dist = foot.dist(point);
        if dist > max_distance {
            return Err(TrackError::TooFar { distance: dist.as_f64(), limit: max_distance.as_f64() });
        }
        let d1 = seg.derivative(u);
        let t = d1 * (T::one() / d1.norm());
        Ok(Projection {
            s: self.wrap_s(self.s_at(k, u)),
            offset: t.cross(point - foot),
            heading: d1.angle(),
            curvature: seg.curvature(u)?,
            segment: k,
            u,
        })
    }

    /// Largest |curvature| over a dense parameter sweep.
    pub fn max_abs_curvature(&self) -> T {
        let mut m = T::zero();
        for seg in &self.segments {
            for i in 0..=64 {
                let u = T::lit(i as f64 / 64.0);
                if let Ok(k) = seg.curvature(u) {
                    m = m.max(k.abs());
                }
            }
        }
        m
    }
}

/// Rounded-rectangle circuit description. `lap_length_m` is the length of the
/// reference (middle) line; lanes are concentric offsets of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvalSpec {
    pub lap_length_m: f64,
    pub aspect_ratio: f64,
    pub corner_radius_m: f64,
    pub lane_count: usize,
    pub lane_width_m: f64,
    pub arc_resolution_m: f64,
}

impl Default for OvalSpec {
    fn default() -> Self {
        Self {
            lap_length_m: 16.4,
            aspect_ratio: 3.5 / 2.2,
            corner_radius_m: 1.0,
            lane_count: 3,
            lane_width_m: 0.30,
            arc_resolution_m: 0.02,
        }
    }
}

impl OvalSpec {
    /// Width and height of the reference line's bounding box.
    pub fn reference_extent(&self) -> (f64, f64) {
        let r = self.corner_radius_m;
        let h = (self.lap_length_m + (8.0 - 2.0 * std::f64::consts::PI) * r) / (2.0 * (1.0 + self.aspect_ratio));
        (self.aspect_ratio * h, h)
    }

    /// Control points of one lane (offset > 0 is outward, i.e. to the right of
    /// counter-clockwise travel).
    pub fn lane_segments<T: Real>(&self, offset: f64) -> Result<Vec<BezierSegment<T>>, TrackError> {
        use std::f64::consts::FRAC_PI_4;
        let (w, h) = self.reference_extent();
        let r = self.corner_radius_m + offset;
        let a = w / 2.0 - self.corner_radius_m;
        let b = h / 2.0 - self.corner_radius_m;
        if a <= 0.0 || b <= 0.0 {
            return Err(TrackError::InvalidOval(format!("corner radius {} too large", self.corner_radius_m)));
        }
        if r <= 0.0 {
            return Err(TrackError::InvalidOval(format!("lane offset {offset} collapses the corner")));
        }
        let v = |x: f64, y: f64| Vec2::new(T::lit(x), T::lit(y));
        let centres = [(a, -b), (a, b), (-a, b), (-a, -b)];
        let mut segs = Vec::with_capacity(12);
        // bottom straight starts at the middle of the bottom edge
        let start = v(0.0, -(b + r));
        let mut cursor = start;
        for (q, &(cx, cy)) in centres.iter().enumerate() {
            let a0 = -std::f64::consts::FRAC_PI_2 + q as f64 * std::f64::consts::FRAC_PI_2;
            let arc_start = v(cx + r * a0.cos(), cy + r * a0.sin());
            segs.push(BezierSegment::line(cursor, arc_start)?);
            let c = v(cx, cy);
            let mid_angle = a0 + FRAC_PI_4;
            let mid = v(cx + r * mid_angle.cos(), cy + r * mid_angle.sin());
            let end_angle = a0 + 2.0 * FRAC_PI_4;
            let end = v(cx + r * end_angle.cos(), cy + r * end_angle.sin());
            let mut first = BezierSegment::arc(c, T::lit(r), T::lit(a0), T::lit(mid_angle))?;
            first.p0 = arc_start;
            first.p3 = mid;
            let mut second = BezierSegment::arc(c, T::lit(r), T::lit(mid_angle), T::lit(end_angle))?;
            second.p0 = mid;
            second.p3 = end;
            segs.push(first);
            segs.push(second);
            cursor = end;
        }
        // left straight half back to the start
        segs.push(BezierSegment::line(cursor, start)?);
        Ok(segs)
    }
}

/// Immutable multi-lane circuit; lanes ordered left to right of travel.
#[derive(Debug, Clone)]
pub struct Track<T> {
    lanes: Vec<Lane<T>>,
    lane_width: T,
}

impl<T: Real> Track<T> {
    pub fn new(lanes: Vec<Vec<BezierSegment<T>>>, lane_width: T, resolution: T) -> Result<Self, TrackError> {
        if lanes.is_empty() {
            return Err(TrackError::NoLanes);
        }
        if !(lane_width > T::zero()) {
            return Err(TrackError::BadLaneWidth(lane_width.as_f64()));
        }
        let lanes = lanes
            .into_iter()
            .enumerate()
            .map(|(i, segs)| Lane::with_index(segs, resolution, i))
            .collect::<Result<Vec<_>, _>>()?;
        let m = lanes.len();
        let bound = T::lit(m as f64) * T::lit(2.0) * T::PI() * lane_width;
        for i in 0..m {
            for j in (i + 1)..m {
                let (li, lj) = (lanes[i].total_length(), lanes[j].total_length());
                if (li - lj).abs() >= bound {
                    return Err(TrackError::InconsistentLanes { a: i, b: j, len_a: li.as_f64(), len_b: lj.as_f64() });
                }
            }
        }
        Ok(Self { lanes, lane_width })
    }

    pub fn oval(spec: &OvalSpec) -> Result<Self, TrackError> {
        if spec.lane_count == 0 {
            return Err(TrackError::NoLanes);
        }
        let m = spec.lane_count as f64;
        let lanes = (0..spec.lane_count)
            .map(|i| spec.lane_segments((i as f64 - (m - 1.0) / 2.0) * spec.lane_width_m))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lanes, T::lit(spec.lane_width_m), T::lit(spec.arc_resolution_m))
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_width(&self) -> T {
        self.lane_width
    }

    pub fn lanes(&self) -> &[Lane<T>] {
        &self.lanes
    }

    pub fn lane(&self, i: usize) -> Result<&Lane<T>, TrackError> {
        self.lanes.get(i).ok_or(TrackError::NoSuchLane(i))
    }

    /// Lane used as the common longitudinal reference (the middle one).
    pub fn reference_lane(&self) -> usize {
        self.lanes.len() / 2
    }

    pub fn lanes_left_of(&self, lane: usize) -> usize {
        lane
    }

    pub fn lanes_right_of(&self, lane: usize) -> usize {
        self.lanes.len() - 1 - lane
    }

    /// Projection onto lane `lane`; points further than ten lane widths are rejected.
    pub fn project(&self, lane: usize, point: Vec2<T>) -> Result<Projection<T>, TrackError> {
        self.lane(lane)?.project(point, self.max_projection_distance())
    }

    pub fn project_near(&self, lane: usize, point: Vec2<T>, hint: T, window: T) -> Result<Projection<T>, TrackError> {
        self.lane(lane)?.project_near(point, hint, window, self.max_projection_distance())
    }

    pub fn max_projection_distance(&self) -> T {
        T::lit(10.0) * self.lane_width
    }

    /// Rejects tracks whose curvature exceeds `limit` anywhere.
    pub fn check_drivable(&self, limit: T) -> Result<(), TrackError> {
        for lane in &self.lanes {
            let k = lane.max_abs_curvature();
            if k > limit {
                return Err(TrackError::TooCurved { curvature: k.as_f64(), limit: limit.as_f64() });
            }
        }
        Ok(())
    }
}
