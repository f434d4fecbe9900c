//! Small geometric primitives shared across the pipeline: axis-aligned
//! boxes, polyline arclength/sampling/clipping, and point-to-polyline
//! queries.

use nalgebra::Vector3;

pub type Point = Vector3<f64>;

/// Axis-aligned box, closed on both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    /// Box spanning `lateral` in y and `longitudinal` in x, unbounded-ish in z.
    pub fn from_ranges(lateral: [f64; 2], longitudinal: [f64; 2]) -> Self {
        Self {
            min: Point::new(longitudinal[0], lateral[0], -1.0e6),
            max: Point::new(longitudinal[1], lateral[1], 1.0e6),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && self.max[i] >= other.min[i])
    }

    /// Smallest axis-aligned box containing the given points.
    pub fn enclosing(points: impl IntoIterator<Item = Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb::new(first, first);
        for p in it {
            for i in 0..3 {
                b.min[i] = b.min[i].min(p[i]);
                b.max[i] = b.max[i].max(p[i]);
            }
        }
        Some(b)
    }
}

/// Total arclength of a polyline.
pub fn arclength(points: &[Point]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Point at a given arclength along the polyline, clamped to its ends.
pub fn point_at_arclength(points: &[Point], s: f64) -> Point {
    debug_assert!(points.len() >= 2);
    if s <= 0.0 {
        return points[0];
    }
    let mut remaining = s;
    for w in points.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if remaining <= len {
            return if len > 0.0 { w[0] + seg * (remaining / len) } else { w[0] };
        }
        remaining -= len;
    }
    *points.last().unwrap()
}

/// Closest point on a polyline to `p`.
///
/// Returns (distance, arclength of the foot, interior), where `interior` is
/// false only when the closest point is a clamped terminal endpoint, i.e.
/// `p` has no orthogonal projection onto any segment and does not sit on an
/// interior vertex.
pub fn closest_on_polyline(points: &[Point], p: &Point) -> (f64, f64, bool) {
    debug_assert!(points.len() >= 2);
    let mut best = (f64::INFINITY, 0.0, false);
    let mut s_acc = 0.0;
    let last_seg = points.len() - 2;
    for (i, w) in points.windows(2).enumerate() {
        let seg = w[1] - w[0];
        let len2 = seg.norm_squared();
        let t = if len2 > 0.0 { ((p - w[0]).dot(&seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let foot = w[0] + seg * t;
        let d = (p - foot).norm();
        if d < best.0 {
            let clamped_terminal = (i == 0 && t == 0.0) || (i == last_seg && t == 1.0);
            best = (d, s_acc + t * len2.sqrt(), !clamped_terminal);
        }
        s_acc += len2.sqrt();
    }
    best
}

/// Clip a polyline to an axis-aligned box, splitting it into the pieces that
/// lie inside. Pieces shorter than two points are dropped.
pub fn clip_polyline(points: &[Point], bbox: &Aabb) -> Vec<Vec<Point>> {
    let mut pieces = Vec::new();
    let mut current: Vec<Point> = Vec::new();
    for w in points.windows(2) {
        match clip_segment(&w[0], &w[1], bbox) {
            Some((a, b)) => {
                if let Some(last) = current.last() {
                    if (last - a).norm() > 1.0e-9 {
                        // Discontinuity: the segment re-enters elsewhere.
                        if current.len() >= 2 {
                            pieces.push(std::mem::take(&mut current));
                        } else {
                            current.clear();
                        }
                        current.push(a);
                    }
                } else {
                    current.push(a);
                }
                if (current.last().unwrap() - b).norm() > 1.0e-9 {
                    current.push(b);
                }
            }
            None => {
                if current.len() >= 2 {
                    pieces.push(std::mem::take(&mut current));
                } else {
                    current.clear();
                }
            }
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    pieces
}

/// Liang-Barsky segment/box clip. Returns the clipped endpoints, or None if
/// the segment misses the box.
fn clip_segment(a: &Point, b: &Point, bbox: &Aabb) -> Option<(Point, Point)> {
    let d = b - a;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for i in 0..3 {
        if d[i].abs() < 1.0e-15 {
            if a[i] < bbox.min[i] || a[i] > bbox.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut ta = (bbox.min[i] - a[i]) * inv;
        let mut tb = (bbox.max[i] - a[i]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((a + d * t0, a + d * t1))
}

/// Angle in radians between two direction vectors, in [0, pi].
pub fn angle_between(u: &Point, v: &Point) -> f64 {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos()
}

/// Angle between two lines (orientation-free), in [0, pi/2].
pub fn line_angle_between(u: &Point, v: &Point) -> f64 {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v).abs() / (nu * nv)).clamp(0.0, 1.0).acos()
}
