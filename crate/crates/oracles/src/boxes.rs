//! Rectangle overlap by point sampling and by polygon clipping.

/// Centre, heading and half extents of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Rect {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.heading.cos(), self.heading.sin());
        (dx * c + dy * s, -dx * s + dy * c)
    }

    fn world(&self, a: f64, b: f64) -> (f64, f64) {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        (self.cx + a * c - b * s, self.cy + a * s + b * c)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (a, b) = self.local(x, y);
        a.abs() <= self.half_length && b.abs() <= self.half_width
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (l, w) = (self.half_length, self.half_width);
        [self.world(l, w), self.world(-l, w), self.world(-l, -w), self.world(l, -w)]
    }

    /// Signed distance from the point to this rectangle's boundary
    /// (negative inside).
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (a, b) = self.local(x, y);
        let qx = a.abs() - self.half_length;
        let qy = b.abs() - self.half_width;
        let outside = qx.max(0.0).hypot(qy.max(0.0));
        outside + qx.max(qy).min(0.0)
    }
}

/// Samples an `n x n` grid over each rectangle (boundary included) and tests
/// containment in the other.
pub fn overlap_by_sampling(a: &Rect, b: &Rect, n: usize) -> bool {
    let hits = |p: &Rect, q: &Rect| {
        for i in 0..n {
            for j in 0..n {
                let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let v = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                let (x, y) = p.world(u * p.half_length, v * p.half_width);
                if q.contains(x, y) {
                    return true;
                }
            }
        }
        false
    };
    hits(a, b) || hits(b, a)
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let orient = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let on = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1)
    };
    let (d1, d2) = (orient(q1, q2, p1), orient(q1, q2, p2));
    let (d3, d4) = (orient(p1, p2, q1), orient(p1, p2, q2));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on(q1, q2, p1)) || (d2 == 0.0 && on(q1, q2, p2)) || (d3 == 0.0 && on(p1, p2, q1)) || (d4 == 0.0 && on(p1, p2, q2))
}

/// Exact rectangle intersection: an edge pair crosses or one contains a
/// corner of the other.
pub fn overlap_exact(a: &Rect, b: &Rect) -> bool {
    let (ca, cb) = (a.corners(), b.corners());
    for i in 0..4 {
        for j in 0..4 {
            if segments_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]) {
                return true;
            }
        }
    }
    ca.iter().any(|&(x, y)| b.contains(x, y)) || cb.iter().any(|&(x, y)| a.contains(x, y))
}

/// Smallest corner-to-boundary clearance between the two rectangles; near
/// zero means the pair is within tangency of each other.
pub fn tangency_margin(a: &Rect, b: &Rect) -> f64 {
    let from = |p: &Rect, q: &Rect| p.corners().iter().map(|&(x, y)| q.signed_distance(x, y).abs()).fold(f64::INFINITY, f64::min);
    from(a, b).min(from(b, a))
}

/// Every overlapping pair `(i, j)` with `i < j`, in lexicographic order.
pub fn all_pairs(rects: &[Rect]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rects.len() {
        for j in i + 1..rects.len() {
            if overlap_exact(&rects[i], &rects[j]) {
                out.push((i, j));
            }
        }
    }
    out
}
