//! Planar primitives and the exact intersection / distance queries used by
//! the ray caster and the collision checks.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotation about the origin by `theta` radians.
    pub fn rotated(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn point_at(&self, t: f64) -> Vec2 {
        self.a + (self.b - self.a) * t
    }

    /// Parameter in [0, 1] of the point on the segment closest to `p`.
    pub fn closest_param(&self, p: Vec2) -> f64 {
        let d = self.b - self.a;
        let len_sq = d.norm_sq();
        if len_sq == 0.0 {
            return 0.0;
        }
        ((p - self.a).dot(d) / len_sq).clamp(0.0, 1.0)
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        self.point_at(self.closest_param(p)).distance(p)
    }

    pub fn intersects(&self, o: &Segment) -> bool {
        let d1 = self.b - self.a;
        let d2 = o.b - o.a;
        let o1 = d1.cross(o.a - self.a);
        let o2 = d1.cross(o.b - self.a);
        let o3 = d2.cross(self.a - o.a);
        let o4 = d2.cross(self.b - o.a);
        if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
            && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
        {
            return true;
        }
        // collinear or touching cases
        (o1 == 0.0 && self.distance_to_point(o.a) == 0.0)
            || (o2 == 0.0 && self.distance_to_point(o.b) == 0.0)
            || (o3 == 0.0 && o.distance_to_point(self.a) == 0.0)
            || (o4 == 0.0 && o.distance_to_point(self.b) == 0.0)
    }

    pub fn distance_to_segment(&self, o: &Segment) -> f64 {
        if self.intersects(o) {
            return 0.0;
        }
        self.distance_to_point(o.a)
            .min(self.distance_to_point(o.b))
            .min(o.distance_to_point(self.a))
            .min(o.distance_to_point(self.b))
    }

    pub fn rotated(&self, theta: f64) -> Self {
        Self::new(self.a.rotated(theta), self.b.rotated(theta))
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub const fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn centered(center: Vec2, side: f64) -> Self {
        let h = 0.5 * side;
        Self::new(
            Vec2::new(center.x - h, center.y - h),
            Vec2::new(center.x + h, center.y + h),
        )
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_strictly(&self, p: Vec2) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn edges(&self) -> [Segment; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Euclidean distance from `p` to the filled box (zero inside).
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn distance_to_segment(&self, s: &Segment) -> f64 {
        if self.contains(s.a) || self.contains(s.b) {
            return 0.0;
        }
        self.edges()
            .iter()
            .map(|e| e.distance_to_segment(s))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Smallest `t >= 0` with `origin + t * dir` on the segment; `dir` must be unit length.
pub fn ray_segment(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let e = seg.b - seg.a;
    let denom = dir.cross(e);
    let w = seg.a - origin;
    if denom == 0.0 {
        // parallel; a collinear overlap hits the nearer endpoint
        if dir.cross(w) != 0.0 {
            return None;
        }
        let ta = w.dot(dir);
        let tb = (seg.b - origin).dot(dir);
        return match (ta >= 0.0, tb >= 0.0) {
            (true, true) => Some(ta.min(tb)),
            (true, false) | (false, true) => Some(0.0),
            (false, false) => None,
        };
    }
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Smallest `t >= 0` where the ray meets the circle boundary (0 if the origin is inside).
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let m = origin - center;
    let b = m.dot(dir);
    let c = m.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    if b > 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // c / (-b + sqrt) avoids cancellation for far-away circles
    let q = -b + disc.sqrt();
    Some(c / q)
}

/// Slab test against a filled axis-aligned box.
pub fn ray_aabb(origin: Vec2, dir: Vec2, aabb: &Aabb) -> Option<f64> {
    let mut t_min = 0.0_f64;
    let mut t_max = f64::INFINITY;
    for (o, d, lo, hi) in [
        (origin.x, dir.x, aabb.min.x, aabb.max.x),
        (origin.y, dir.y, aabb.min.y, aabb.max.y),
    ] {
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let (mut t0, mut t1) = ((lo - o) * inv, (hi - o) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
    }
    Some(t_min)
}

/// Normalizes an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ray_hits_perpendicular_segment() {
        let seg = Segment::new(Vec2::new(2.0, -1.0), Vec2::new(2.0, 1.0));
        let t = ray_segment(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), &seg).unwrap();
        assert_eq!(t, 2.0);
        assert!(ray_segment(Vec2::new(0.0, 0.0), Vec2::new(-1.0, 0.0), &seg).is_none());
    }

    #[test]
    fn ray_circle_front_and_inside() {
        let t = ray_circle(Vec2::default(), Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.1).unwrap();
        assert!((t - 0.9).abs() < 1e-15);
        assert_eq!(
            ray_circle(Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.1),
            Some(0.0)
        );
        assert!(ray_circle(Vec2::default(), Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), 0.1).is_none());
    }

    #[test]
    fn ray_box_slab() {
        let b = Aabb::centered(Vec2::new(3.0, 0.0), 1.0);
        assert_eq!(ray_aabb(Vec2::default(), Vec2::new(1.0, 0.0), &b), Some(2.5));
        assert!(ray_aabb(Vec2::default(), Vec2::new(0.0, 1.0), &b).is_none());
    }

    #[test]
    fn wrap_angle_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distances() {
        let s = Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let o = Segment::new(Vec2::new(0.5, 1.0), Vec2::new(0.5, 2.0));
        assert_eq!(s.distance_to_segment(&o), 1.0);
        let x = Segment::new(Vec2::new(0.5, -1.0), Vec2::new(0.5, 1.0));
        assert_eq!(s.distance_to_segment(&x), 0.0);
        let b = Aabb::centered(Vec2::new(0.5, 2.0), 1.0);
        assert!((b.distance_to_segment(&s) - 1.5).abs() < 1e-12);
    }
}
